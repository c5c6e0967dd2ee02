//! Meshing-overhead timing for the three generators.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::elliptic::{elliptic_smooth, SmoothOptions};
use crate::error::{MeshError, Result};
use crate::geometry::BoundarySpec;
use crate::network::Network;
use crate::tfi::tfi_generate;
use crate::trainer::generate_mesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Tfi,
    Elliptic,
    Neural,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Tfi => "tfi",
            BenchMethod::Elliptic => "elliptic",
            BenchMethod::Neural => "neural",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfi" => Ok(BenchMethod::Tfi),
            "elliptic" => Ok(BenchMethod::Elliptic),
            "neural" => Ok(BenchMethod::Neural),
            _ => Err(MeshError::InvalidParam(format!("unknown bench method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: BenchMethod,
    pub dims: [usize; 3],
    /// Total seconds over all repetitions.
    pub wall_time: f64,
    pub repetitions: usize,
    pub mean_time: f64,
}

/// Marks the edges of each timed region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchEvent {
    Start { method: BenchMethod, rep: usize },
    Stop { method: BenchMethod, rep: usize },
}

/// Times each method `repetitions` times. The elliptic timing includes its
/// TFI initial grid; the neural timing is one batched forward pass.
pub fn run_bench(
    spec: &BoundarySpec,
    dims: [usize; 3],
    methods: &[BenchMethod],
    repetitions: usize,
    model: Option<&Network>,
) -> Result<Vec<BenchRecord>> {
    run_bench_observed(spec, dims, methods, repetitions, model, |_| {})
}

/// [`run_bench`] with a hook called immediately around every timed region.
pub fn run_bench_observed(
    spec: &BoundarySpec,
    dims: [usize; 3],
    methods: &[BenchMethod],
    repetitions: usize,
    model: Option<&Network>,
    mut hook: impl FnMut(BenchEvent),
) -> Result<Vec<BenchRecord>> {
    if repetitions == 0 {
        return Err(MeshError::InvalidParam("repetitions must be at least 1".into()));
    }
    if methods.contains(&BenchMethod::Neural) {
        match model {
            None => return Err(MeshError::InvalidParam("the neural method needs a trained model".into())),
            Some(net) if net.dim() != spec.dim() => {
                return Err(MeshError::DimensionMismatch(format!(
                    "{}D model for a {}D geometry",
                    net.dim().n(),
                    spec.dim().n()
                )))
            }
            _ => {}
        }
    }
    let opts = SmoothOptions::default();
    let mut records = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut total = 0.0;
        for rep in 0..repetitions {
            hook(BenchEvent::Start { method, rep });
            let t = Instant::now();
            let grid = match method {
                BenchMethod::Tfi => tfi_generate(spec, dims)?,
                BenchMethod::Elliptic => elliptic_smooth(&tfi_generate(spec, dims)?, &opts)?.grid,
                BenchMethod::Neural => generate_mesh(model.expect("checked above"), spec.dim(), dims)?,
            };
            total += t.elapsed().as_secs_f64();
            hook(BenchEvent::Stop { method, rep });
            drop(std::hint::black_box(grid));
        }
        records.push(BenchRecord {
            method,
            dims,
            wall_time: total,
            repetitions,
            mean_time: total / repetitions as f64,
        });
    }
    Ok(records)
}
