use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meshforge_core::bench::{run_bench, BenchMethod};
use meshforge_core::checkpoint::Checkpoint;
use meshforge_core::elliptic::{elliptic_smooth, SmoothOptions};
use meshforge_core::geometry::{builtin_geometry, load_boundary_spec, BoundarySpec, Dim};
use meshforge_core::grid::StructuredGrid;
use meshforge_core::io::{export_plot3d, export_vtk, read_vtk};
use meshforge_core::quality::quality_report;
use meshforge_core::stencil::StencilConfig;
use meshforge_core::tfi::tfi_generate;
use meshforge_core::trainer::{generate_mesh, train_with_progress, Phase, SurfaceWeightMode, TrainConfig};
use meshforge_core::MeshError;

const SEED_ENV: &str = "MESHFORGE_SEED";

#[derive(Parser)]
#[command(name = "meshforge", version, about = "Structured mesh generation with TFI, elliptic smoothing and a neural mesher")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transfinite-interpolation mesh
    Tfi {
        #[command(flatten)]
        geo: GeometryArgs,
        #[arg(long, value_parser = parse_dims)]
        dims: Dims,
        #[arg(long)]
        out: PathBuf,
    },
    /// Elliptic (Winslow) smoothing of the TFI mesh
    Smooth {
        #[command(flatten)]
        geo: GeometryArgs,
        #[arg(long, value_parser = parse_dims)]
        dims: Dims,
        #[arg(long, default_value_t = 1.5)]
        omega: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a neural mesher for a geometry
    Train(TrainArgs),
    /// Generate a mesh from a trained checkpoint
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_dims)]
        dims: Dims,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quality metrics of a VTK structured grid
    Quality {
        #[arg(long)]
        mesh: PathBuf,
        /// Also write the report as TOML
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time meshing methods
    Bench {
        #[command(flatten)]
        geo: GeometryArgs,
        #[arg(long, value_parser = parse_dims)]
        dims: Dims,
        #[arg(long, value_delimiter = ',', default_value = "tfi,elliptic")]
        methods: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
}

#[derive(Args)]
struct GeometryArgs {
    /// Boundary file, or `builtin:<name>`
    #[arg(long)]
    geometry: String,
    /// Built-in geometry parameter, `key=value` (repeatable)
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    geo: GeometryArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adam_iters: Option<usize>,
    /// Uniform stencil step
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    no_reweight: bool,
    #[arg(long)]
    no_surface_weighting: bool,
    #[arg(long)]
    no_grad_projection: bool,
    #[arg(long)]
    freeze_coefficients: bool,
    #[arg(long, value_enum)]
    weight_mode: Option<WeightMode>,
    /// Print progress every N Adam iterations (0 disables)
    #[arg(long, default_value_t = 1000)]
    log_every: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightMode {
    /// w = d + 1
    D1,
    /// w = d
    D,
}

#[derive(Clone, Debug)]
struct Dims(Vec<usize>);

fn parse_dims(s: &str) -> Result<Dims, String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad dimension `{t}` in `{s}`")))
        .collect::<Result<_, _>>()?;
    match dims.len() {
        2 | 3 => Ok(Dims(dims)),
        _ => Err(format!("expected NIxNJ or NIxNJxNK, got `{s}`")),
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v = v.parse().map_err(|_| format!("bad value in `{s}`"))?;
    Ok((k.trim().to_string(), v))
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Core(MeshError),
}

impl From<MeshError> for Failure {
    fn from(e: MeshError) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) if e.is_numerical() || matches!(e, MeshError::DegenerateCell { .. }) => 2,
            Failure::Core(e) if e.is_io() || matches!(e, MeshError::Parse { .. }) => 3,
            Failure::Core(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_geometry(args: &GeometryArgs) -> CliResult<BoundarySpec> {
    match args.geometry.strip_prefix("builtin:") {
        Some(name) => {
            let params: BTreeMap<String, f64> = args.params.iter().cloned().collect();
            Ok(builtin_geometry(name, &params)?)
        }
        None if !args.params.is_empty() => Err(Failure::Usage("--param applies to built-in geometries only".into())),
        None => Ok(load_boundary_spec(&args.geometry)?),
    }
}

fn lattice(dim: Dim, dims: &Dims) -> CliResult<[usize; 3]> {
    match (dim, dims.0.as_slice()) {
        (Dim::Two, &[i, j]) => Ok([i, j, 1]),
        (Dim::Three, &[i, j, k]) => Ok([i, j, k]),
        _ => Err(Failure::Usage(format!(
            "a {}D mesh needs {} dimensions, got {}",
            dim.n(),
            dim.n(),
            dims.0.len()
        ))),
    }
}

fn write_mesh(grid: &StructuredGrid, out: &Path) -> CliResult<()> {
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "p3d" | "xyz" | "x" => export_plot3d(grid, out)?,
        _ => export_vtk(grid, out)?,
    }
    println!("wrote {} ({} points)", out.display(), grid.points().len());
    Ok(())
}

fn seed_from_env() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut seed_in_file = false;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io { path: path.clone(), source: e })?;
            seed_in_file = text
                .parse::<toml::Table>()
                .map(|t| t.contains_key("seed"))
                .unwrap_or(false);
            TrainConfig::from_toml_str(&text, path)?
        }
        None => TrainConfig::default(),
    };
    // Precedence: --seed, then the config file, then the environment.
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    } else if !seed_in_file {
        if let Some(seed) = seed_from_env()? {
            cfg.seed = seed;
        }
    }
    if let Some(n) = args.adam_iters {
        cfg.adam_iters = n;
    }
    if let Some(h) = args.h {
        cfg.stencil = StencilConfig::uniform(h);
    }
    cfg.reweight &= !args.no_reweight;
    cfg.surface_weighting &= !args.no_surface_weighting;
    cfg.grad_projection &= !args.no_grad_projection;
    cfg.freeze_coefficients |= args.freeze_coefficients;
    if let Some(mode) = args.weight_mode {
        cfg.surface_weight_mode = match mode {
            WeightMode::D1 => SurfaceWeightMode::DistancePlusOne,
            WeightMode::D => SurfaceWeightMode::Distance,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Tfi { geo, dims, out } => {
            let spec = load_geometry(&geo)?;
            let grid = tfi_generate(&spec, lattice(spec.dim(), &dims)?)?;
            write_mesh(&grid, &out)
        }
        Command::Smooth { geo, dims, omega, tol, max_iters, out } => {
            let spec = load_geometry(&geo)?;
            let init = tfi_generate(&spec, lattice(spec.dim(), &dims)?)?;
            let opts = SmoothOptions { max_iters, tol, relaxation: omega };
            let res = elliptic_smooth(&init, &opts)?;
            println!(
                "iterations {} residual {:.8e} converged {}",
                res.iterations,
                res.final_residual,
                if res.converged { "yes" } else { "no" }
            );
            if res.skipped_updates > 0 {
                eprintln!("warning: {} node updates skipped (degenerate metric)", res.skipped_updates);
            }
            write_mesh(&res.grid, &out)
        }
        Command::Train(args) => {
            let spec = load_geometry(&args.geo)?;
            let cfg = train_config(&args)?;
            let every = args.log_every;
            let model = train_with_progress(&spec, &cfg, |h| {
                if h.phase == Phase::Adam && every > 0 && h.iteration % every == 0 {
                    eprintln!(
                        "adam {:>6} loss1 {:.4e} loss2 {:.4e} total {:.4e} lr {:.3e}",
                        h.iteration, h.loss1, h.loss2, h.total, h.lr
                    );
                }
            })?;
            if let Some(last) = model.history.last() {
                println!("final loss1 {:.8e} loss2 {:.8e} total {:.8e}", last.loss1, last.loss2, last.total);
            }
            println!("test-set loss {:.8e}", model.test_set_loss(cfg.seed.wrapping_add(1))?);
            Checkpoint::from_model(&model).save(&args.checkpoint)?;
            println!("wrote {}", args.checkpoint.display());
            Ok(())
        }
        Command::Generate { checkpoint, dims, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dim = ck.net.dim();
            let grid = generate_mesh(&ck.net, dim, lattice(dim, &dims)?)?;
            write_mesh(&grid, &out)
        }
        Command::Quality { mesh, report } => {
            let grid = read_vtk(&mesh)?;
            let r = quality_report(&grid)?;
            print!("{}", r.to_text());
            if let Some(path) = report {
                std::fs::write(&path, r.to_toml_string()).map_err(|e| MeshError::Io { path: path.clone(), source: e })?;
            }
            Ok(())
        }
        Command::Bench { geo, dims, methods, checkpoint, reps } => {
            let spec = load_geometry(&geo)?;
            let dims = lattice(spec.dim(), &dims)?;
            let methods = methods
                .iter()
                .map(|m| m.trim().parse::<BenchMethod>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let ck = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let records = run_bench(&spec, dims, &methods, reps, ck.as_ref().map(|c| &c.net))?;
            println!("method dims repetitions mean_time_s wall_time_s");
            for r in records {
                println!(
                    "{} {}x{}x{} {} {:.8e} {:.8e}",
                    r.method, r.dims[0], r.dims[1], r.dims[2], r.repetitions, r.mean_time, r.wall_time
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
