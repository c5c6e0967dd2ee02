//! Physics-informed training of the parametric-to-physical map.
//!
//! The interior loss is the squared Winslow residual evaluated with central
//! differences of the network output on a stencil around each sample point,
//! so no input derivatives of the network are ever needed. The surface loss
//! fits the boundary map with per-point distance weights. The two tasks are
//! balanced with learned uncertainty scalars and, optionally, projected so
//! that their gradients do not conflict.

use std::cell::RefCell;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{winslow_coefficients, winslow_coefficients_vjp, winslow_residual, WinslowCoeffs};
use crate::error::{MeshError, Result};
use crate::geometry::{sample_training_batch, BoundarySpec, Dim, ParamPoint, PhysPoint, TrainingBatch};
use crate::grid::{check_dims, StructuredGrid};
use crate::network::{
    lbfgs_minimize_observed, mlp_init, AdamState, LbfgsOptions, LbfgsStop, LrSchedule, Network, ParamGradient,
};
use crate::stencil::{build_stencil, fd_derivatives, fd_derivatives_vjp, slots_per_center, DerivativeBundle, StencilConfig};
use crate::vec3::{self, Vec3};

/// Anything that maps parametric points to physical points in one batch.
pub trait ParamMap {
    fn map_batch(&self, points: &[ParamPoint]) -> Result<Vec<PhysPoint>>;
}

impl ParamMap for Network {
    fn map_batch(&self, points: &[ParamPoint]) -> Result<Vec<PhysPoint>> {
        Ok(self.forward(points, false)?.0)
    }
}

/// Adapts a pointwise closure to [`ParamMap`].
pub struct FnMap<F>(pub F);

impl<F: Fn(ParamPoint) -> PhysPoint> ParamMap for FnMap<F> {
    fn map_batch(&self, points: &[ParamPoint]) -> Result<Vec<PhysPoint>> {
        Ok(points.iter().map(|&p| (self.0)(p)).collect())
    }
}

/// Squared Winslow residual at one stencil center: `(residual, |residual|^2)`.
pub fn pde_residual(dim: Dim, d: &DerivativeBundle) -> (Vec3, f64) {
    let k = winslow_coefficients(dim, d);
    let r = winslow_residual(dim, &k, d);
    (r, vec3::dot(r, r))
}

/// Cotangent of the bundle for `upstream * |residual|^2`. With `freeze`, the
/// coefficients are treated as constants.
pub fn pde_residual_vjp(dim: Dim, d: &DerivativeBundle, freeze: bool, upstream: f64) -> DerivativeBundle {
    let k = winslow_coefficients(dim, d);
    let r = winslow_residual(dim, &k, d);
    let rb = vec3::scale(r, 2.0 * upstream);
    let mut bar = DerivativeBundle::default();
    let mut kb = WinslowCoeffs::default();
    match dim {
        Dim::Two => {
            bar.second[0] = vec3::scale(rb, k.alpha1);
            bar.second[1] = vec3::scale(rb, k.alpha2);
            bar.mixed[0] = vec3::scale(rb, -2.0 * k.beta12);
            kb.alpha1 = vec3::dot(rb, d.second[0]);
            kb.alpha2 = vec3::dot(rb, d.second[1]);
            kb.beta12 = -2.0 * vec3::dot(rb, d.mixed[0]);
        }
        Dim::Three => {
            let alphas = [k.alpha1, k.alpha2, k.alpha3];
            let betas = [k.beta12, k.beta23, k.beta31];
            for a in 0..3 {
                bar.second[a] = vec3::scale(rb, alphas[a]);
                bar.mixed[a] = vec3::scale(rb, 2.0 * betas[a]);
            }
            kb.alpha1 = vec3::dot(rb, d.second[0]);
            kb.alpha2 = vec3::dot(rb, d.second[1]);
            kb.alpha3 = vec3::dot(rb, d.second[2]);
            kb.beta12 = 2.0 * vec3::dot(rb, d.mixed[0]);
            kb.beta23 = 2.0 * vec3::dot(rb, d.mixed[1]);
            kb.beta31 = 2.0 * vec3::dot(rb, d.mixed[2]);
        }
    }
    if !freeze {
        winslow_coefficients_vjp(dim, &d.first, &kb, &mut bar.first);
    }
    bar
}

/// Mean residual contribution over stencil centers given the map's values at
/// every stencil slot, plus the cotangent of that mean on every slot value.
pub fn interior_loss_from_outputs(
    dim: Dim,
    outputs: &[PhysPoint],
    cfg: &StencilConfig,
    freeze: bool,
) -> Result<(f64, Vec<PhysPoint>)> {
    let slots = slots_per_center(dim);
    if outputs.is_empty() || !outputs.len().is_multiple_of(slots) {
        return Err(MeshError::ShapeMismatch(format!(
            "{} stencil outputs is not a positive multiple of {slots}",
            outputs.len()
        )));
    }
    let n = outputs.len() / slots;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut cot = vec![[0.0; 3]; outputs.len()];
    for (out, cot) in outputs.chunks_exact(slots).zip(cot.chunks_exact_mut(slots)) {
        let d = fd_derivatives(dim, out, cfg);
        loss += pde_residual(dim, &d).1;
        let bar = pde_residual_vjp(dim, &d, freeze, inv_n);
        fd_derivatives_vjp(dim, &bar, cfg, cot);
    }
    Ok((loss * inv_n, cot))
}

/// Loss1 and its exact parameter gradient.
pub fn interior_loss_and_grad(
    net: &Network,
    interior: &[ParamPoint],
    cfg: &StencilConfig,
    freeze: bool,
) -> Result<(f64, ParamGradient)> {
    let stencil = build_stencil(net.dim(), interior, cfg)?;
    let (out, tape) = net.forward(&stencil.points, true)?;
    let (loss, cot) = interior_loss_from_outputs(net.dim(), &out, cfg, freeze)?;
    let grad = net.backward(&tape.expect("recorded"), &cot)?;
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceWeightMode {
    /// `w = d + 1`
    #[default]
    DistancePlusOne,
    /// `w = d`
    Distance,
}

impl SurfaceWeightMode {
    pub fn weight(self, d: f64) -> f64 {
        match self {
            SurfaceWeightMode::DistancePlusOne => d + 1.0,
            SurfaceWeightMode::Distance => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceLoss {
    /// Mean squared distance.
    pub loss2: f64,
    /// Mean weighted squared distance.
    pub weighted_loss2: f64,
    pub weights: Vec<f64>,
}

pub fn surface_loss(
    predictions: &[PhysPoint],
    targets: &[PhysPoint],
    mode: SurfaceWeightMode,
) -> Result<SurfaceLoss> {
    surface_loss_with(predictions, targets, |_, d| mode.weight(d))
}

fn surface_loss_with(
    predictions: &[PhysPoint],
    targets: &[PhysPoint],
    mut weight: impl FnMut(usize, f64) -> f64,
) -> Result<SurfaceLoss> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(MeshError::ShapeMismatch(format!(
            "{} predictions for {} surface targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    let mut loss2 = 0.0;
    let mut weighted = 0.0;
    let mut weights = Vec::with_capacity(predictions.len());
    for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
        let d = vec3::dist(*p, *t);
        let w = weight(i, d);
        loss2 += d * d;
        weighted += w * d * d;
        weights.push(w);
    }
    Ok(SurfaceLoss { loss2: loss2 / n, weighted_loss2: weighted / n, weights })
}

/// Task-noise scalars `a1, a2`, stored as `s = log(a^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyParams {
    pub log_a_sq: [f64; 2],
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        UncertaintyParams { log_a_sq: [0.0; 2] }
    }
}

impl UncertaintyParams {
    pub fn from_a(a1: f64, a2: f64) -> Self {
        UncertaintyParams { log_a_sq: [(a1 * a1).ln(), (a2 * a2).ln()] }
    }

    pub fn a1(&self) -> f64 {
        (0.5 * self.log_a_sq[0]).exp()
    }

    pub fn a2(&self) -> f64 {
        (0.5 * self.log_a_sq[1]).exp()
    }

    /// Loss multipliers `1 / (2 a^2)`.
    pub fn factors(&self) -> [f64; 2] {
        [0.5 * (-self.log_a_sq[0]).exp(), 0.5 * (-self.log_a_sq[1]).exp()]
    }
}

/// `L1/(2a1^2) + wL2/(2a2^2) + log(1 + a1^2 + a2^2)`, or the plain sum when
/// reweighting is off.
pub fn total_loss(l1: f64, weighted_l2: f64, u: &UncertaintyParams, reweight: bool) -> f64 {
    if !reweight {
        return l1 + weighted_l2;
    }
    let [c1, c2] = u.factors();
    let [e1, e2] = [u.log_a_sq[0].exp(), u.log_a_sq[1].exp()];
    c1 * l1 + c2 * weighted_l2 + (1.0 + e1 + e2).ln()
}

/// Gradient of [`total_loss`] (reweighting on) with respect to `log(a^2)`.
pub fn total_loss_grad_u(l1: f64, weighted_l2: f64, u: &UncertaintyParams) -> [f64; 2] {
    let [c1, c2] = u.factors();
    let [e1, e2] = [u.log_a_sq[0].exp(), u.log_a_sq[1].exp()];
    let denom = 1.0 + e1 + e2;
    [-c1 * l1 + e1 / denom, -c2 * weighted_l2 + e2 / denom]
}

/// Symmetric two-task projection of conflicting gradients, summed.
pub fn project_gradients(g1: &ParamGradient, g2: &ParamGradient) -> Result<ParamGradient> {
    if g1.len() != g2.len() {
        return Err(MeshError::ShapeMismatch(format!(
            "gradients of length {} and {}",
            g1.len(),
            g2.len()
        )));
    }
    let dot = g1.dot(g2);
    let mut out = g1.clone();
    out.axpy(1.0, g2);
    if dot >= 0.0 {
        return Ok(out);
    }
    let n1 = g1.dot(g1);
    let n2 = g2.dot(g2);
    // g1' = g1 - (g1.g2/|g2|^2) g2, g2' = g2 - (g2.g1/|g1|^2) g1
    if n2 > 0.0 {
        out.axpy(-dot / n2, g2);
    }
    if n1 > 0.0 {
        out.axpy(-dot / n1, g1);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden layer widths; empty selects the default for the geometry's
    /// dimension (`[45, 45, 45]` in 2D, `[85, 85, 85, 85]` in 3D).
    pub hidden_layers: Vec<usize>,
    pub n_interior: usize,
    pub n_surface: usize,
    pub adam_iters: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_interval: u64,
    pub lbfgs_iters: usize,
    pub lbfgs_memory: usize,
    pub stencil: StencilConfig,
    pub reweight: bool,
    pub surface_weighting: bool,
    pub grad_projection: bool,
    pub freeze_coefficients: bool,
    pub surface_weight_mode: SurfaceWeightMode,
    /// Reuse one batch for every Adam iteration instead of resampling.
    pub fixed_batch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: Vec::new(),
            n_interior: 4000,
            n_surface: 6000,
            adam_iters: 12_000,
            lr: 1e-3,
            lr_decay: 0.9,
            lr_decay_interval: 1000,
            lbfgs_iters: 500,
            lbfgs_memory: 10,
            stencil: StencilConfig::default(),
            reweight: true,
            surface_weighting: true,
            grad_projection: true,
            freeze_coefficients: false,
            surface_weight_mode: SurfaceWeightMode::DistancePlusOne,
            fixed_batch: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MeshError::InvalidConfig(m.to_string()));
        if self.n_interior == 0 || self.n_surface == 0 {
            return bad("n_interior and n_surface must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_interval == 0 {
            return bad("lr_decay must lie in (0, 1] with a positive interval");
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be at least 1");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        self.stencil.validate()
    }

    pub fn layer_sizes(&self, dim: Dim) -> Vec<usize> {
        let hidden = if self.hidden_layers.is_empty() {
            match dim {
                Dim::Two => vec![45; 3],
                Dim::Three => vec![85; 4],
            }
        } else {
            self.hidden_layers.clone()
        };
        let n = dim.n();
        std::iter::once(n).chain(hidden).chain(std::iter::once(n)).collect()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base: self.lr, decay: self.lr_decay, interval: self.lr_decay_interval }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| MeshError::parse(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MeshError::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Lbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub loss1: f64,
    pub loss2: f64,
    pub weighted_loss2: f64,
    pub total: f64,
    /// Adam learning rate; zero for L-BFGS steps.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub net: Network,
    pub uncertainty: UncertaintyParams,
    pub stencil: StencilConfig,
    pub spec: BoundarySpec,
    pub history: Vec<HistoryEntry>,
    pub lbfgs_stop: Option<LbfgsStop>,
}

/// Everything one evaluation of the two tasks produces.
#[derive(Clone, Debug)]
pub struct TaskEval {
    pub loss1: f64,
    pub loss2: f64,
    pub weighted_loss2: f64,
    pub weights: Vec<f64>,
    pub grad1: ParamGradient,
    pub grad2: ParamGradient,
}

/// Evaluates both task losses and their unscaled parameter gradients. Surface
/// weights are constants: either `frozen_weights` or computed from the current
/// predictions.
pub fn evaluate_tasks(
    net: &Network,
    batch: &TrainingBatch,
    cfg: &TrainConfig,
    frozen_weights: Option<&[f64]>,
) -> Result<TaskEval> {
    let (loss1, grad1) = interior_loss_and_grad(net, &batch.interior, &cfg.stencil, cfg.freeze_coefficients)?;
    let params: Vec<ParamPoint> = batch.surface.iter().map(|s| s.0).collect();
    let targets: Vec<PhysPoint> = batch.surface.iter().map(|s| s.1).collect();
    let (pred, tape) = net.forward(&params, true)?;
    let surf = match frozen_weights {
        Some(w) => {
            if w.len() != pred.len() {
                return Err(MeshError::ShapeMismatch("frozen surface weights".into()));
            }
            surface_loss_with(&pred, &targets, |i, _| w[i])?
        }
        None if cfg.surface_weighting => surface_loss(&pred, &targets, cfg.surface_weight_mode)?,
        None => surface_loss_with(&pred, &targets, |_, _| 1.0)?,
    };
    let inv_n = 1.0 / pred.len() as f64;
    let cot: Vec<PhysPoint> = pred
        .iter()
        .zip(&targets)
        .zip(&surf.weights)
        .map(|((p, t), w)| vec3::scale(vec3::sub(*p, *t), 2.0 * w * inv_n))
        .collect();
    let grad2 = net.backward(&tape.expect("recorded"), &cot)?;
    Ok(TaskEval {
        loss1,
        loss2: surf.loss2,
        weighted_loss2: surf.weighted_loss2,
        weights: surf.weights,
        grad1,
        grad2,
    })
}

/// Combined objective, network gradient and uncertainty gradient.
pub fn combine_tasks(
    eval: &TaskEval,
    u: &UncertaintyParams,
    reweight: bool,
    projection: bool,
) -> Result<(f64, ParamGradient, [f64; 2])> {
    let total = total_loss(eval.loss1, eval.weighted_loss2, u, reweight);
    let (g1, g2, gu) = if reweight {
        let [c1, c2] = u.factors();
        (
            eval.grad1.scaled(c1),
            eval.grad2.scaled(c2),
            total_loss_grad_u(eval.loss1, eval.weighted_loss2, u),
        )
    } else {
        (eval.grad1.clone(), eval.grad2.clone(), [0.0; 2])
    };
    let grad = if projection {
        project_gradients(&g1, &g2)?
    } else {
        let mut g = g1;
        g.axpy(1.0, &g2);
        g
    };
    Ok((total, grad, gu))
}

fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn draw_batch(spec: &BoundarySpec, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<TrainingBatch> {
    sample_training_batch(spec, cfg.n_interior, cfg.n_surface, cfg.stencil.max_step(spec.dim()), rng)
}

/// Trains a network for `spec`: Adam on fresh batches, then L-BFGS on one
/// frozen batch.
pub fn train(spec: &BoundarySpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_with_progress(spec, cfg, |_| {})
}

/// [`train`], reporting each history entry as it is produced.
pub fn train_with_progress(
    spec: &BoundarySpec,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&HistoryEntry),
) -> Result<TrainedModel> {
    cfg.validate()?;
    let dim = spec.dim();
    let mut net = mlp_init(&cfg.layer_sizes(dim), cfg.seed)?;
    let mut u = UncertaintyParams::default();
    let mut adam = AdamState::new(net.num_params(), cfg.schedule());
    let mut adam_u = AdamState::new(2, cfg.schedule());
    let mut rng = batch_rng(cfg.seed);
    let mut history = Vec::with_capacity(cfg.adam_iters + cfg.lbfgs_iters);
    let mut fixed = None;

    for it in 0..cfg.adam_iters {
        let fresh;
        let batch = if cfg.fixed_batch {
            if fixed.is_none() {
                fixed = Some(draw_batch(spec, cfg, &mut rng)?);
            }
            fixed.as_ref().unwrap()
        } else {
            fresh = draw_batch(spec, cfg, &mut rng)?;
            &fresh
        };
        let eval = evaluate_tasks(&net, batch, cfg, None)?;
        let (total, grad, gu) = combine_tasks(&eval, &u, cfg.reweight, cfg.grad_projection)?;
        if !total.is_finite() || !grad.is_finite() {
            return Err(MeshError::NonFinite(format!("training loss at Adam iteration {it}")));
        }
        let entry = HistoryEntry {
            phase: Phase::Adam,
            iteration: it,
            loss1: eval.loss1,
            loss2: eval.loss2,
            weighted_loss2: eval.weighted_loss2,
            total,
            lr: adam.lr(),
        };
        progress(&entry);
        history.push(entry);
        adam.step(net.params_mut(), &grad.values)?;
        if cfg.reweight {
            adam_u.step(&mut u.log_a_sq, &gu)?;
        }
    }

    let mut lbfgs_stop = None;
    if cfg.lbfgs_iters > 0 {
        let batch = match fixed {
            Some(b) => b,
            None => draw_batch(spec, cfg, &mut rng)?,
        };
        let weights = evaluate_tasks(&net, &batch, cfg, None)?.weights;
        let opts = LbfgsOptions { memory: cfg.lbfgs_memory, max_iters: cfg.lbfgs_iters, ..Default::default() };
        let last = RefCell::new(None::<TaskEval>);
        let mut work = net.clone();
        let mut lbfgs_iter = 0;
        let report = lbfgs_minimize_observed(
            net.params().to_vec(),
            |x| {
                work.params_mut().copy_from_slice(x);
                let eval = evaluate_tasks(&work, &batch, cfg, Some(&weights))?;
                let (total, grad, _) = combine_tasks(&eval, &u, cfg.reweight, false)?;
                *last.borrow_mut() = Some(eval);
                Ok((total, grad.values))
            },
            &opts,
            |loss| {
                let eval = last.borrow();
                let eval = eval.as_ref().expect("accepted point was evaluated");
                let entry = HistoryEntry {
                    phase: Phase::Lbfgs,
                    iteration: lbfgs_iter,
                    loss1: eval.loss1,
                    loss2: eval.loss2,
                    weighted_loss2: eval.weighted_loss2,
                    total: loss,
                    lr: 0.0,
                };
                lbfgs_iter += 1;
                progress(&entry);
                history.push(entry);
            },
        )?;
        net.params_mut().copy_from_slice(&report.x);
        lbfgs_stop = Some(report.stop);
    }

    Ok(TrainedModel {
        net,
        uncertainty: u,
        stencil: cfg.stencil,
        spec: spec.clone(),
        history,
        lbfgs_stop,
    })
}

/// Uniform parametric lattice in `i, j, k` order.
pub fn parametric_lattice(dim: Dim, dims: [usize; 3]) -> Result<Vec<ParamPoint>> {
    check_dims(dim, dims)?;
    let mut pts = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let z = if dim == Dim::Three { StructuredGrid::param(k, dims[2]) } else { 0.0 };
                pts.push([StructuredGrid::param(i, dims[0]), StructuredGrid::param(j, dims[1]), z]);
            }
        }
    }
    Ok(pts)
}

/// Evaluates the map on the uniform lattice in one batch. Boundary nodes are
/// the raw predictions.
pub fn generate_mesh<M: ParamMap + ?Sized>(map: &M, dim: Dim, dims: [usize; 3]) -> Result<StructuredGrid> {
    let pts = parametric_lattice(dim, dims)?;
    let out = map.map_batch(&pts)?;
    StructuredGrid::new(dim, dims, out)
}

impl TrainedModel {
    pub fn generate_mesh(&self, dims: [usize; 3]) -> Result<StructuredGrid> {
        generate_mesh(&self.net, self.net.dim(), dims)
    }

    pub fn test_set_loss(&self, seed: u64) -> Result<f64> {
        test_set_loss(&self.net, &self.spec, &self.stencil, seed)
    }
}

pub const TEST_INTERIOR: usize = 1000;
pub const TEST_SURFACE: usize = 1500;

/// Unweighted `Loss1 + Loss2` on a held-out batch drawn from `seed`.
pub fn test_set_loss<M: ParamMap + ?Sized>(
    map: &M,
    spec: &BoundarySpec,
    stencil: &StencilConfig,
    seed: u64,
) -> Result<f64> {
    let dim = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = sample_training_batch(spec, TEST_INTERIOR, TEST_SURFACE, stencil.max_step(dim), &mut rng)?;
    let st = build_stencil(dim, &batch.interior, stencil)?;
    let out = map.map_batch(&st.points)?;
    let slots = slots_per_center(dim);
    let l1 = out
        .chunks_exact(slots)
        .map(|o| pde_residual(dim, &fd_derivatives(dim, o, stencil)).1)
        .sum::<f64>()
        / batch.interior.len() as f64;
    let params: Vec<ParamPoint> = batch.surface.iter().map(|s| s.0).collect();
    let targets: Vec<PhysPoint> = batch.surface.iter().map(|s| s.1).collect();
    let pred = map.map_batch(&params)?;
    let l2 = surface_loss_with(&pred, &targets, |_, _| 1.0)?.loss2;
    Ok(l1 + l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin_geometry;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn geometry(name: &str) -> BoundarySpec {
        builtin_geometry(name, &BTreeMap::new()).unwrap()
    }

    fn bundle_of(f: impl Fn(ParamPoint) -> PhysPoint, c: ParamPoint, h: f64) -> DerivativeBundle {
        let cfg = StencilConfig::uniform(h);
        let st = build_stencil(Dim::Three, &[c], &cfg).unwrap();
        let out: Vec<_> = st.points.iter().map(|&p| f(p)).collect();
        fd_derivatives(Dim::Three, &out, &cfg)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
        diff / scale
    }

    #[test]
    fn identity_residual_is_zero() {
        let d = bundle_of(|p| p, [0.5; 3], 0.1);
        let (r, c) = pde_residual(Dim::Three, &d);
        assert!(vec3::norm(r) < 1e-12);
        assert!(c < 1e-24);
    }

    #[test]
    fn quadratic_residual_by_hand() {
        let d = bundle_of(|p| [p[0] * p[0], p[1], p[2]], [0.5; 3], 0.1);
        assert!((winslow_coefficients(Dim::Three, &d).alpha1 - 1.0).abs() < 1e-12);
        let (r, c) = pde_residual(Dim::Three, &d);
        assert!((r[0] - 2.0).abs() < 1e-12 && r[1].abs() < 1e-12 && r[2].abs() < 1e-12);
        assert!((c - 4.0).abs() < 1e-11);
    }

    fn rotation(seed: u64) -> [[f64; 3]; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let (a, b, c) = (a * 6.0, b * 6.0, c * 6.0);
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
        let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| {
            let mut o = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    o[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
                }
            }
            o
        };
        mul(rz, mul(ry, rx))
    }

    fn apply(r: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
        [vec3::dot(r[0], p), vec3::dot(r[1], p), vec3::dot(r[2], p)]
    }

    fn curved(p: ParamPoint) -> PhysPoint {
        [p[0] + 0.3 * p[1] * p[1], p[1] * (1.0 + 0.5 * p[0]), p[2] + 0.2 * (p[0] * p[1]).sin()]
    }

    #[test]
    fn residual_contribution_is_rotation_invariant() {
        let rot = rotation(3);
        let a = pde_residual(Dim::Three, &bundle_of(curved, [0.4, 0.6, 0.5], 0.05)).1;
        let b = pde_residual(Dim::Three, &bundle_of(|p| apply(&rot, curved(p)), [0.4, 0.6, 0.5], 0.05)).1;
        assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn loss1_of_rotated_map_is_invariant() {
        let spec = geometry("unit_cube");
        let cfg = StencilConfig::uniform(0.02);
        let rot = rotation(9);
        let a = test_set_loss(&FnMap(curved), &spec, &cfg, 1).unwrap();
        // Surface loss changes under rotation; compare the interior part only.
        let interior: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            (0..16).map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]).collect()
        };
        let st = build_stencil(Dim::Three, &interior, &cfg).unwrap();
        let out: Vec<_> = st.points.iter().map(|&p| curved(p)).collect();
        let rout: Vec<_> = out.iter().map(|&p| apply(&rot, p)).collect();
        let l = interior_loss_from_outputs(Dim::Three, &out, &cfg, false).unwrap().0;
        let lr = interior_loss_from_outputs(Dim::Three, &rout, &cfg, false).unwrap().0;
        assert!((l - lr).abs() < 1e-10 * l.max(1.0));
        assert!(a > 0.0);
    }

    #[test]
    fn identity_stub_has_zero_interior_loss_and_gradient() {
        let cfg = StencilConfig::uniform(0.05);
        let centers = [[0.3, 0.4, 0.5], [0.7, 0.2, 0.6]];
        let st = build_stencil(Dim::Three, &centers, &cfg).unwrap();
        let (l, cot) = interior_loss_from_outputs(Dim::Three, &st.points, &cfg, false).unwrap();
        assert!(l < 1e-24);
        assert!(cot.iter().flatten().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn surface_loss_by_hand() {
        let s = surface_loss(&[[1.0, 1.0, 1.0]], &[[1.0, 1.0, 0.0]], SurfaceWeightMode::DistancePlusOne).unwrap();
        assert_eq!((s.loss2, s.weighted_loss2, s.weights.clone()), (1.0, 2.0, vec![2.0]));
        let s = surface_loss(
            &[[0.0; 3], [1.0, 0.0, 0.0]],
            &[[0.0; 3], [0.0; 3]],
            SurfaceWeightMode::DistancePlusOne,
        )
        .unwrap();
        assert_eq!((s.loss2, s.weighted_loss2), (0.5, 1.0));
        let s = surface_loss(&[[0.5; 3]; 3], &[[0.5; 3]; 3], SurfaceWeightMode::DistancePlusOne).unwrap();
        assert_eq!(s.loss2, 0.0);
        assert!(s.weights.iter().all(|&w| w == 1.0));
        let s = surface_loss(&[[3.0, 0.0, 0.0]], &[[0.0; 3]], SurfaceWeightMode::Distance).unwrap();
        assert_eq!((s.weights[0], s.weighted_loss2), (3.0, 27.0));
        assert!(surface_loss(&[[0.0; 3]], &[], SurfaceWeightMode::Distance).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let u = UncertaintyParams::default();
        assert_eq!((u.a1(), u.a2()), (1.0, 1.0));
        assert!((total_loss(2.0, 4.0, &u, true) - (3.0 + 3f64.ln())).abs() < 1e-15);
        assert!((total_loss(0.0, 0.0, &u, true) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(total_loss(2.0, 4.0, &u, false), 6.0);
        let u = UncertaintyParams::from_a(2.0, 0.5);
        let expected = 2.0 / 8.0 + 4.0 / 0.5 + (1.0f64 + 4.0 + 0.25).ln();
        assert!((total_loss(2.0, 4.0, &u, true) - expected).abs() < 1e-14);
    }

    #[test]
    fn uncertainty_gradient_matches_finite_differences() {
        let u = UncertaintyParams { log_a_sq: [0.3, -0.8] };
        let g = total_loss_grad_u(1.7, 0.4, &u);
        for i in 0..2 {
            let e = 1e-6;
            let mut p = u;
            p.log_a_sq[i] += e;
            let mut m = u;
            m.log_a_sq[i] -= e;
            let fd = (total_loss(1.7, 0.4, &p, true) - total_loss(1.7, 0.4, &m, true)) / (2.0 * e);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    fn pg(v: &[f64]) -> ParamGradient {
        ParamGradient { values: v.to_vec() }
    }

    #[test]
    fn projection_cases() {
        assert_eq!(project_gradients(&pg(&[1.0, 0.0]), &pg(&[0.0, 1.0])).unwrap().values, vec![1.0, 1.0]);
        let p = project_gradients(&pg(&[1.0, 0.0]), &pg(&[-1.0, 1.0])).unwrap();
        assert!((p.values[0] - 0.5).abs() < 1e-15 && (p.values[1] - 1.5).abs() < 1e-15);
        let p = project_gradients(&pg(&[1.0, 0.0]), &pg(&[-1.0, 0.0])).unwrap();
        assert_eq!(p.values, vec![0.0, 0.0]);
        let p = project_gradients(&pg(&[0.0, 0.0]), &pg(&[-1.0, 2.0])).unwrap();
        assert_eq!(p.values, vec![-1.0, 2.0]);
        assert!(project_gradients(&pg(&[1.0]), &pg(&[1.0, 2.0])).is_err());
    }

    fn small_net(seed: u64) -> Network {
        // Larger weights than Xavier so the map is visibly nonlinear.
        let mut net = mlp_init(&[3, 5, 3], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in net.params_mut() {
            *p = 1.5 * *p + 0.3 * rng.gen_range(-1.0..1.0);
        }
        net
    }

    fn interior_fd(net: &Network, pts: &[ParamPoint], cfg: &StencilConfig, freeze_at: Option<&Network>) -> Vec<f64> {
        // With freeze_at, the coefficients come from that network's outputs.
        let loss = |n: &Network| -> f64 {
            let st = build_stencil(Dim::Three, pts, cfg).unwrap();
            let out = n.forward(&st.points, false).unwrap().0;
            match freeze_at {
                None => interior_loss_from_outputs(Dim::Three, &out, cfg, false).unwrap().0,
                Some(base) => {
                    let base_out = base.forward(&st.points, false).unwrap().0;
                    out.chunks_exact(19)
                        .zip(base_out.chunks_exact(19))
                        .map(|(o, b)| {
                            let d = fd_derivatives(Dim::Three, o, cfg);
                            let k = winslow_coefficients(Dim::Three, &fd_derivatives(Dim::Three, b, cfg));
                            let r = winslow_residual(Dim::Three, &k, &d);
                            vec3::dot(r, r)
                        })
                        .sum::<f64>()
                        / pts.len() as f64
                }
            }
        };
        let e = 1e-5;
        (0..net.num_params())
            .map(|i| {
                let mut n = net.clone();
                n.params_mut()[i] += e;
                let f1 = loss(&n);
                n.params_mut()[i] += e;
                let f2 = loss(&n);
                n.params_mut()[i] -= 3.0 * e;
                let fm1 = loss(&n);
                n.params_mut()[i] -= e;
                let fm2 = loss(&n);
                (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * e)
            })
            .collect()
    }

    #[test]
    fn interior_gradient_matches_finite_differences() {
        let net = small_net(1);
        let pts = [[0.3, 0.45, 0.6], [0.7, 0.25, 0.4]];
        let cfg = StencilConfig::uniform(0.1);
        let (l, g) = interior_loss_and_grad(&net, &pts, &cfg, false).unwrap();
        assert!(l > 0.0);
        let fd = interior_fd(&net, &pts, &cfg, None);
        assert!(rel_err(&g.values, &fd) < 1e-6, "{}", rel_err(&g.values, &fd));
    }

    #[test]
    fn frozen_gradient_matches_surrogate() {
        let net = small_net(2);
        let pts = [[0.3, 0.45, 0.6], [0.7, 0.25, 0.4]];
        let cfg = StencilConfig::uniform(0.1);
        let (l_free, g_free) = interior_loss_and_grad(&net, &pts, &cfg, false).unwrap();
        let (l_frozen, g_frozen) = interior_loss_and_grad(&net, &pts, &cfg, true).unwrap();
        assert_eq!(l_free, l_frozen);
        assert!(rel_err(&g_frozen.values, &g_free.values) > 1e-3);
        let fd = interior_fd(&net, &pts, &cfg, Some(&net));
        assert!(rel_err(&g_frozen.values, &fd) < 1e-6, "{}", rel_err(&g_frozen.values, &fd));
    }

    #[test]
    fn planar_gradient_matches_finite_differences() {
        let mut net = mlp_init(&[2, 6, 2], 5).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p *= 1.7);
        let pts = [[0.3, 0.6, 0.0], [0.55, 0.35, 0.0], [0.8, 0.7, 0.0]];
        let cfg = StencilConfig::uniform(0.1);
        let (_, g) = interior_loss_and_grad(&net, &pts, &cfg, false).unwrap();
        let loss = |n: &Network| {
            let st = build_stencil(Dim::Two, &pts, &cfg).unwrap();
            let out = n.forward(&st.points, false).unwrap().0;
            interior_loss_from_outputs(Dim::Two, &out, &cfg, false).unwrap().0
        };
        let e = 1e-5;
        let fd: Vec<f64> = (0..net.num_params())
            .map(|i| {
                let mut p = net.clone();
                p.params_mut()[i] += e;
                let mut m = net.clone();
                m.params_mut()[i] -= e;
                (loss(&p) - loss(&m)) / (2.0 * e)
            })
            .collect();
        assert!(rel_err(&g.values, &fd) < 1e-6);
    }

    #[test]
    fn generate_mesh_corners_are_net_outputs() {
        let net = mlp_init(&[3, 7, 3], 3).unwrap();
        let g = generate_mesh(&net, Dim::Three, [2, 2, 2]).unwrap();
        for (i, p) in g.points().iter().enumerate() {
            let q = [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64];
            assert_eq!(*p, net.forward(&[q], false).unwrap().0[0]);
        }
        let a = generate_mesh(&net, Dim::Three, [9, 9, 9]).unwrap();
        let b = generate_mesh(&net, Dim::Three, [17, 17, 17]).unwrap();
        assert_eq!(a.at(4, 4, 4), b.at(8, 8, 8));
        assert_eq!(a.at(8, 0, 8), b.at(16, 0, 16));
    }

    #[test]
    fn test_set_loss_of_identity_is_zero() {
        let spec = geometry("unit_cube");
        let l = test_set_loss(&FnMap(|p: ParamPoint| p), &spec, &StencilConfig::default(), 5).unwrap();
        assert!(l < 1e-20, "{l}");
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            hidden_layers: vec![16, 16],
            n_interior: 256,
            n_surface: 384,
            adam_iters: 200,
            lbfgs_iters: 20,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn tiny_training_run_descends_and_is_deterministic() {
        let spec = geometry("unit_cube");
        let cfg = tiny_cfg();
        let a = train(&spec, &cfg).unwrap();
        assert_eq!(a.history.iter().filter(|h| h.phase == Phase::Adam).count(), 200);
        let first = a.history[0].total;
        let last = a.history.last().unwrap().total;
        assert!(last < first, "{first} -> {last}");
        let b = train(&spec, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net, b.net);

        let untrained = mlp_init(&cfg.layer_sizes(Dim::Three), cfg.seed).unwrap();
        let t0 = test_set_loss(&untrained, &spec, &cfg.stencil, 77).unwrap();
        let t1 = a.test_set_loss(77).unwrap();
        assert!(t1 < t0);
        assert_eq!(t1, a.test_set_loss(77).unwrap());
    }

    #[test]
    fn lbfgs_phase_never_increases_loss() {
        let spec = geometry("unit_square");
        let cfg = TrainConfig { hidden_layers: vec![8, 8], adam_iters: 30, lbfgs_iters: 40, ..tiny_cfg() };
        let m = train(&spec, &cfg).unwrap();
        let lb: Vec<_> = m.history.iter().filter(|h| h.phase == Phase::Lbfgs).map(|h| h.total).collect();
        assert!(!lb.is_empty());
        for w in lb.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig { hidden_layers: vec![8, 9], fixed_batch: true, ..Default::default() };
        let text = cfg.to_toml_string();
        assert_eq!(TrainConfig::from_toml_str(&text, Path::new("x")).unwrap(), cfg);
        let partial = "adam_iters = 5\nsurface_weight_mode = \"distance\"\n[stencil]\nh = [0.02, 0.02, 0.02]\n";
        let c = TrainConfig::from_toml_str(partial, Path::new("x")).unwrap();
        assert_eq!(c.adam_iters, 5);
        assert_eq!(c.surface_weight_mode, SurfaceWeightMode::Distance);
        assert!(TrainConfig::from_toml_str("bogus = 1", Path::new("x")).is_err());
        assert!(TrainConfig::from_toml_str("n_interior = 0", Path::new("x")).is_err());
    }
}
