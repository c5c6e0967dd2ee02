use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Network, ParamGradient};
use crate::error::{MeshError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_trials: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-10,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_trials: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStop {
    GradTol,
    MaxIters,
    LineSearchFailed,
    /// The objective returned a non-finite value at an accepted point.
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub initial_loss: f64,
    pub loss: f64,
    pub iterations: usize,
    pub stop: LbfgsStop,
    /// Loss after each accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(loss: f64, g: &[f64]) -> bool {
    loss.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Limited-memory BFGS with two-loop recursion and Armijo backtracking.
/// The reported loss never exceeds the initial one.
pub fn lbfgs_minimize<F>(x0: Vec<f64>, f: F, opts: &LbfgsOptions) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_minimize_observed(x0, f, opts, |_| {})
}

/// [`lbfgs_minimize`], calling `on_accept` with the loss after each accepted
/// step. The accepted point is always the most recent one passed to `f`.
pub fn lbfgs_minimize_observed<F, O>(x0: Vec<f64>, mut f: F, opts: &LbfgsOptions, mut on_accept: O) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(f64),
{
    if opts.memory == 0 || !(opts.shrink > 0.0 && opts.shrink < 1.0) || !(opts.armijo_c > 0.0 && opts.armijo_c < 1.0) {
        return Err(MeshError::InvalidConfig(format!("invalid L-BFGS options {opts:?}")));
    }
    let mut x = x0;
    let (mut loss, mut g) = f(&x)?;
    if !finite(loss, &g) {
        return Err(MeshError::NonFinite("objective at the L-BFGS starting point".into()));
    }
    let mut report = LbfgsReport {
        x: Vec::new(),
        initial_loss: loss,
        loss,
        iterations: 0,
        stop: LbfgsStop::MaxIters,
        history: Vec::new(),
    };
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let n = x.len();
    let mut alpha = vec![0.0; opts.memory];
    loop {
        if dot(&g, &g).sqrt() <= opts.grad_tol {
            report.stop = LbfgsStop::GradTol;
            break;
        }
        if report.iterations >= opts.max_iters {
            report.stop = LbfgsStop::MaxIters;
            break;
        }
        // Two-loop recursion: d = -H g.
        let mut q = g.clone();
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qv, yv)| *qv -= alpha[i] * yv);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qv, sv)| *qv += (alpha[i] - beta) * sv);
        }
        let mut d: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            hist.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1.0);
            d = g.iter().map(|v| -scale * v).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_trials {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (tl, tg) = f(&trial)?;
            if tl.is_finite() && tl <= loss + opts.armijo_c * step * slope {
                accepted = Some((trial, tl, tg));
                break;
            }
            step *= opts.shrink;
        }
        let Some((xn, ln, gn)) = accepted else {
            report.stop = LbfgsStop::LineSearchFailed;
            break;
        };
        if !finite(ln, &gn) {
            report.stop = LbfgsStop::NonFinite;
            break;
        }
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        loss = ln;
        g = gn;
        report.iterations += 1;
        report.history.push(loss);
        on_accept(loss);
    }
    report.loss = loss;
    report.x = x;
    Ok(report)
}

/// Runs [`lbfgs_minimize`] over the network parameters.
pub fn lbfgs_refine<F>(net: &Network, mut objective: F, opts: &LbfgsOptions) -> Result<(Network, LbfgsReport)>
where
    F: FnMut(&Network) -> Result<(f64, ParamGradient)>,
{
    let mut work = net.clone();
    let report = lbfgs_minimize(
        net.params().to_vec(),
        |x| {
            work.params_mut().copy_from_slice(x);
            let (l, g) = objective(&work)?;
            Ok((l, g.values))
        },
        opts,
    )?;
    let mut out = net.clone();
    out.params_mut().copy_from_slice(&report.x);
    Ok((out, report))
}
