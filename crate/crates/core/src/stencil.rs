//! Central finite-difference stencils on the parametric domain.
//!
//! Slot layout per center (3D, 19 slots):
//!
//! * `0`: center
//! * `1 + 2a`, `2 + 2a`: `+h_a`, `-h_a` along axis `a` (slots 1..=6)
//! * `7 + 4p .. 7 + 4p + 3`: plane `p` diagonals `(+,+)`, `(+,-)`, `(-,+)`, `(-,-)`
//!   for the planes `(xi,eta)`, `(eta,zeta)`, `(zeta,xi)`; the first sign
//!   applies to the first axis of the pair.
//!
//! 2D uses the first five axis slots and a single plane: 9 slots.

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};
use crate::geometry::{Dim, ParamPoint, PhysPoint};
use crate::vec3::Vec3;

/// Axis pairs of the mixed-derivative planes, in slot order.
pub const PLANES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];
const DIAG_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

pub const fn slots_per_center(dim: Dim) -> usize {
    match dim {
        Dim::Two => 9,
        Dim::Three => 19,
    }
}

#[inline]
pub const fn axis_slot(axis: usize, plus: bool) -> usize {
    1 + 2 * axis + if plus { 0 } else { 1 }
}

#[inline]
pub fn diag_slot(dim: Dim, plane: usize, corner: usize) -> usize {
    1 + 2 * dim.n() + 4 * plane + corner
}

fn num_planes(dim: Dim) -> usize {
    match dim {
        Dim::Two => 1,
        Dim::Three => 3,
    }
}

/// Parametric step sizes `h1, h2, h3` (`h3` ignored in 2D).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilConfig {
    pub h: [f64; 3],
}

impl Default for StencilConfig {
    fn default() -> Self {
        StencilConfig { h: [0.01; 3] }
    }
}

impl StencilConfig {
    pub fn uniform(h: f64) -> Self {
        StencilConfig { h: [h; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.iter().all(|&h| h > 0.0 && h < 0.5) {
            Ok(())
        } else {
            Err(MeshError::InvalidConfig(format!(
                "stencil steps {:?} must lie in (0, 0.5)",
                self.h
            )))
        }
    }

    /// Largest step over the active axes.
    pub fn max_step(&self, dim: Dim) -> f64 {
        self.h[..dim.n()].iter().copied().fold(0.0, f64::max)
    }
}

/// Stencil points for a batch of centers, stored center-major:
/// slot `s` of center `c` is at `points[c * slots + s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilBatch {
    pub dim: Dim,
    pub centers: Vec<ParamPoint>,
    pub points: Vec<ParamPoint>,
}

impl StencilBatch {
    pub fn slots(&self) -> usize {
        slots_per_center(self.dim)
    }

    #[inline]
    pub fn flat_index(&self, center: usize, slot: usize) -> usize {
        center * self.slots() + slot
    }
}

/// Emits the full stencil footprint for every center.
pub fn build_stencil(dim: Dim, centers: &[ParamPoint], cfg: &StencilConfig) -> Result<StencilBatch> {
    cfg.validate()?;
    let n = dim.n();
    let slots = slots_per_center(dim);
    let mut points = Vec::with_capacity(centers.len() * slots);
    for &c in centers {
        let inside = (0..n).all(|a| c[a] - cfg.h[a] >= 0.0 && c[a] + cfg.h[a] <= 1.0);
        if !inside {
            return Err(MeshError::StencilOutOfDomain { center: c, steps: cfg.h });
        }
        points.push(c);
        for a in 0..n {
            for sign in [1.0, -1.0] {
                let mut p = c;
                p[a] += sign * cfg.h[a];
                points.push(p);
            }
        }
        for &(a, b) in &PLANES[..num_planes(dim)] {
            for (sa, sb) in DIAG_SIGNS {
                let mut p = c;
                p[a] += sa * cfg.h[a];
                p[b] += sb * cfg.h[b];
                points.push(p);
            }
        }
    }
    Ok(StencilBatch { dim, centers: centers.to_vec(), points })
}

/// Finite-difference first, second, and mixed derivatives of the map at one
/// stencil center. `mixed` is ordered `(xi,eta)`, `(eta,zeta)`, `(zeta,xi)`;
/// in 2D only the first entries of each array are meaningful.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DerivativeBundle {
    pub first: [Vec3; 3],
    pub second: [Vec3; 3],
    pub mixed: [Vec3; 3],
}

impl DerivativeBundle {
    pub fn is_finite(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .chain(&self.mixed)
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// Central differences from the per-slot outputs of one center.
pub fn fd_derivatives(dim: Dim, out: &[PhysPoint], cfg: &StencilConfig) -> DerivativeBundle {
    debug_assert_eq!(out.len(), slots_per_center(dim));
    let mut d = DerivativeBundle::default();
    let center = out[0];
    for a in 0..dim.n() {
        let h = cfg.h[a];
        let p = out[axis_slot(a, true)];
        let m = out[axis_slot(a, false)];
        for c in 0..3 {
            d.first[a][c] = (p[c] - m[c]) / (2.0 * h);
            d.second[a][c] = (p[c] - 2.0 * center[c] + m[c]) / (h * h);
        }
    }
    for (pl, &(a, b)) in PLANES[..num_planes(dim)].iter().enumerate() {
        let q = |corner| out[diag_slot(dim, pl, corner)];
        let scale = 4.0 * cfg.h[a] * cfg.h[b];
        for c in 0..3 {
            d.mixed[pl][c] = (q(0)[c] - q(1)[c] - q(2)[c] + q(3)[c]) / scale;
        }
    }
    d
}

/// Adjoint of [`fd_derivatives`]: accumulates the output-space cotangents of
/// the stencil slots given cotangents on every bundle entry.
pub fn fd_derivatives_vjp(
    dim: Dim,
    bar: &DerivativeBundle,
    cfg: &StencilConfig,
    slot_bar: &mut [Vec3],
) {
    for a in 0..dim.n() {
        let h = cfg.h[a];
        let (sp, sm) = (axis_slot(a, true), axis_slot(a, false));
        for c in 0..3 {
            let f = bar.first[a][c] / (2.0 * h);
            let s = bar.second[a][c] / (h * h);
            slot_bar[sp][c] += f + s;
            slot_bar[sm][c] += -f + s;
            slot_bar[0][c] -= 2.0 * s;
        }
    }
    for (pl, &(a, b)) in PLANES[..num_planes(dim)].iter().enumerate() {
        let scale = 4.0 * cfg.h[a] * cfg.h[b];
        for c in 0..3 {
            let m = bar.mixed[pl][c] / scale;
            slot_bar[diag_slot(dim, pl, 0)][c] += m;
            slot_bar[diag_slot(dim, pl, 1)][c] -= m;
            slot_bar[diag_slot(dim, pl, 2)][c] -= m;
            slot_bar[diag_slot(dim, pl, 3)][c] += m;
        }
    }
}
