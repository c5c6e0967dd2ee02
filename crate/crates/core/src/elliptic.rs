//! Winslow elliptic grid smoothing with point-iterative SOR.
//!
//! The smoother works in index space (unit steps). Residuals reported by
//! [`residual_norm`] are normalized per node by the diagonal weight
//! `alpha1 + alpha2 + alpha3` (2D: `alpha + gamma`), which makes them a
//! second difference in physical length units and independent of the overall
//! grid scale. The normalized residual equals twice the Jacobi correction of
//! the node.

use crate::error::{MeshError, Result};
use crate::geometry::Dim;
use crate::grid::StructuredGrid;
use crate::stencil::DerivativeBundle;
use crate::vec3::{self, Vec3};

/// Winslow metric coefficients.
///
/// In 2D, `alpha1` holds `alpha = g22`, `beta12` holds `beta = g12` and
/// `alpha2` holds `gamma = g11`; the remaining fields are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WinslowCoeffs {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta12: f64,
    pub beta23: f64,
    pub beta31: f64,
}

impl WinslowCoeffs {
    /// Weight of the node's own value in the discrete operator (halved).
    pub fn diagonal(&self, dim: Dim) -> f64 {
        match dim {
            Dim::Two => self.alpha1 + self.alpha2,
            Dim::Three => self.alpha1 + self.alpha2 + self.alpha3,
        }
    }
}

/// Metric tensor entries `g_ab = r_a . r_b` as (g11, g22, g33, g12, g23, g13).
#[inline]
fn metric(first: &[Vec3; 3]) -> [f64; 6] {
    let [a, b, c] = *first;
    [
        vec3::dot(a, a),
        vec3::dot(b, b),
        vec3::dot(c, c),
        vec3::dot(a, b),
        vec3::dot(b, c),
        vec3::dot(a, c),
    ]
}

/// Winslow coefficients from first derivatives. The subtracted terms of the
/// alphas are squared (cofactors of the metric tensor).
pub fn winslow_coefficients(dim: Dim, d: &DerivativeBundle) -> WinslowCoeffs {
    let [g11, g22, g33, g12, g23, g13] = metric(&d.first);
    match dim {
        Dim::Two => WinslowCoeffs {
            alpha1: g22,
            alpha2: g11,
            beta12: g12,
            ..Default::default()
        },
        Dim::Three => WinslowCoeffs {
            alpha1: g22 * g33 - g23 * g23,
            alpha2: g33 * g11 - g13 * g13,
            alpha3: g11 * g22 - g12 * g12,
            beta12: g23 * g13 - g12 * g33,
            beta23: g13 * g12 - g23 * g11,
            beta31: g12 * g23 - g13 * g22,
        },
    }
}

/// Un-normalized Winslow residual vector for given coefficients.
pub fn winslow_residual(dim: Dim, k: &WinslowCoeffs, d: &DerivativeBundle) -> Vec3 {
    let mut r = [0.0; 3];
    for c in 0..3 {
        r[c] = match dim {
            Dim::Two => {
                k.alpha1 * d.second[0][c] - 2.0 * k.beta12 * d.mixed[0][c]
                    + k.alpha2 * d.second[1][c]
            }
            Dim::Three => {
                k.alpha1 * d.second[0][c]
                    + k.alpha2 * d.second[1][c]
                    + k.alpha3 * d.second[2][c]
                    + 2.0 * k.beta12 * d.mixed[0][c]
                    + 2.0 * k.beta23 * d.mixed[1][c]
                    + 2.0 * k.beta31 * d.mixed[2][c]
            }
        };
    }
    r
}

/// Adjoint of [`winslow_coefficients`]: given cotangents on the coefficients,
/// accumulates cotangents on the first derivatives.
pub fn winslow_coefficients_vjp(
    dim: Dim,
    first: &[Vec3; 3],
    bar: &WinslowCoeffs,
    first_bar: &mut [Vec3; 3],
) {
    let [g11, g22, g33, g12, g23, g13] = metric(first);
    // Cotangents on the unique metric entries.
    let (mut b11, mut b22, mut b33, mut b12, mut b23, mut b13) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    match dim {
        Dim::Two => {
            b22 += bar.alpha1;
            b11 += bar.alpha2;
            b12 += bar.beta12;
        }
        Dim::Three => {
            let WinslowCoeffs { alpha1, alpha2, alpha3, beta12, beta23, beta31 } = *bar;
            b22 += alpha1 * g33;
            b33 += alpha1 * g22;
            b23 -= alpha1 * 2.0 * g23;

            b33 += alpha2 * g11;
            b11 += alpha2 * g33;
            b13 -= alpha2 * 2.0 * g13;

            b11 += alpha3 * g22;
            b22 += alpha3 * g11;
            b12 -= alpha3 * 2.0 * g12;

            b23 += beta12 * g13;
            b13 += beta12 * g23;
            b12 -= beta12 * g33;
            b33 -= beta12 * g12;

            b13 += beta23 * g12;
            b12 += beta23 * g13;
            b23 -= beta23 * g11;
            b11 -= beta23 * g23;

            b12 += beta31 * g23;
            b23 += beta31 * g12;
            b13 -= beta31 * g22;
            b22 -= beta31 * g13;
        }
    }
    let [ra, rb, rc] = *first;
    for c in 0..3 {
        first_bar[0][c] += 2.0 * b11 * ra[c] + b12 * rb[c] + b13 * rc[c];
        first_bar[1][c] += 2.0 * b22 * rb[c] + b12 * ra[c] + b23 * rc[c];
        first_bar[2][c] += 2.0 * b33 * rc[c] + b23 * rb[c] + b13 * ra[c];
    }
}

/// Index-space derivatives of the grid at an interior node.
pub fn grid_derivatives(grid: &StructuredGrid, i: usize, j: usize, k: usize) -> DerivativeBundle {
    let p = |di: isize, dj: isize, dk: isize| {
        grid.at(
            (i as isize + di) as usize,
            (j as isize + dj) as usize,
            (k as isize + dk) as usize,
        )
    };
    let dim = grid.dim();
    let n = dim.n();
    let step = |a: usize, s: isize| {
        let mut o = [0isize; 3];
        o[a] = s;
        o
    };
    let mut d = DerivativeBundle::default();
    let center = p(0, 0, 0);
    for a in 0..n {
        let [pi, pj, pk] = step(a, 1);
        let [mi, mj, mk] = step(a, -1);
        let plus = p(pi, pj, pk);
        let minus = p(mi, mj, mk);
        for c in 0..3 {
            d.first[a][c] = 0.5 * (plus[c] - minus[c]);
            d.second[a][c] = plus[c] - 2.0 * center[c] + minus[c];
        }
    }
    let planes: &[(usize, usize)] = match dim {
        Dim::Two => &[(0, 1)],
        Dim::Three => &[(0, 1), (1, 2), (2, 0)],
    };
    for (pl, &(a, b)) in planes.iter().enumerate() {
        let q = |sa: isize, sb: isize| {
            let mut o = [0isize; 3];
            o[a] = sa;
            o[b] = sb;
            p(o[0], o[1], o[2])
        };
        let (pp, pm, mp, mm) = (q(1, 1), q(1, -1), q(-1, 1), q(-1, -1));
        for c in 0..3 {
            d.mixed[pl][c] = 0.25 * (pp[c] - pm[c] - mp[c] + mm[c]);
        }
    }
    d
}

fn check_smoothable(grid: &StructuredGrid) -> Result<()> {
    let dims = grid.dims();
    if dims[..grid.dim().n()].iter().any(|&n| n < 3) {
        return Err(MeshError::GridTooSmall(format!(
            "elliptic residual needs at least 3 nodes per axis, got {dims:?}"
        )));
    }
    Ok(())
}

fn interior_range(grid: &StructuredGrid) -> [std::ops::Range<usize>; 3] {
    let [ni, nj, nk] = grid.dims();
    let kr = match grid.dim() {
        Dim::Two => 0..1,
        Dim::Three => 1..nk - 1,
    };
    [1..ni - 1, 1..nj - 1, kr]
}

/// Normalized Winslow residual vector at an interior node, zero where the
/// diagonal weight vanishes.
pub fn node_residual(grid: &StructuredGrid, i: usize, j: usize, k: usize) -> Vec3 {
    let dim = grid.dim();
    let d = grid_derivatives(grid, i, j, k);
    let coeffs = winslow_coefficients(dim, &d);
    let diag = coeffs.diagonal(dim);
    if diag > 0.0 {
        vec3::scale(winslow_residual(dim, &coeffs, &d), 1.0 / diag)
    } else {
        [0.0; 3]
    }
}

/// Root-mean-square normalized residual over interior nodes and components.
pub fn residual_norm(grid: &StructuredGrid) -> Result<f64> {
    check_smoothable(grid)?;
    let [ir, jr, kr] = interior_range(grid);
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in kr {
        for j in jr.clone() {
            for i in ir.clone() {
                let r = node_residual(grid, i, j, k);
                sum += r[..grid.dim().n()].iter().map(|v| v * v).sum::<f64>();
                count += grid.dim().n();
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub relaxation: f64,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        SmoothOptions { max_iters: 10_000, tol: 1e-6, relaxation: 1.5 }
    }
}

impl SmoothOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(MeshError::InvalidConfig(
                "smoothing needs tol > 0 and max_iters >= 1".into(),
            ));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(MeshError::InvalidConfig(format!(
                "relaxation factor {} outside (0, 2)",
                self.relaxation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothResult {
    pub grid: StructuredGrid,
    /// Sweeps performed.
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Node updates skipped because the diagonal weight was not positive.
    pub skipped_updates: usize,
    /// Residual after each sweep.
    pub residual_history: Vec<f64>,
}

/// Gauss-Seidel/SOR Winslow smoothing with the input boundary held fixed.
/// Nodes are visited in lexicographic `(k, j, i)` order.
pub fn elliptic_smooth(init: &StructuredGrid, opts: &SmoothOptions) -> Result<SmoothResult> {
    opts.validate()?;
    let mut residual = residual_norm(init)?;
    let mut grid = init.clone();
    let mut result = SmoothResult {
        grid: init.clone(),
        iterations: 0,
        final_residual: residual,
        converged: residual <= opts.tol,
        skipped_updates: 0,
        residual_history: Vec::new(),
    };
    if result.converged {
        return Ok(result);
    }
    let dim = grid.dim();
    let omega = opts.relaxation;
    let [ir, jr, kr] = interior_range(&grid);
    for iter in 1..=opts.max_iters {
        for k in kr.clone() {
            for j in jr.clone() {
                for i in ir.clone() {
                    let d = grid_derivatives(&grid, i, j, k);
                    let coeffs = winslow_coefficients(dim, &d);
                    let diag = coeffs.diagonal(dim);
                    if !(diag > 0.0) {
                        result.skipped_updates += 1;
                        continue;
                    }
                    // residual = 2 * diag * (target - current)
                    let r = winslow_residual(dim, &coeffs, &d);
                    let old = grid.at(i, j, k);
                    let mut new = old;
                    for c in 0..dim.n() {
                        new[c] = old[c] + omega * r[c] / (2.0 * diag);
                    }
                    if !vec3::is_finite(new) {
                        return Err(MeshError::NonFinite(format!(
                            "node ({i}, {j}, {k}) at iteration {iter}"
                        )));
                    }
                    grid.set(i, j, k, new);
                }
            }
        }
        residual = residual_norm(&grid)?;
        result.residual_history.push(residual);
        result.iterations = iter;
        if !residual.is_finite() {
            return Err(MeshError::NonFinite(format!("residual at iteration {iter}")));
        }
        if residual <= opts.tol {
            break;
        }
    }
    result.final_residual = residual;
    result.converged = residual <= opts.tol;
    result.grid = grid;
    Ok(result)
}
