//! Transfinite interpolation: the 2D Coons patch and the 3D Boolean-sum
//! trilinear blend of six faces.

use crate::error::Result;
use crate::geometry::{eval_boundary, BoundarySpec, Dim, ParamPoint, PhysPoint};
use crate::grid::{check_dims, StructuredGrid};

#[inline]
fn blend(side: usize, t: f64) -> f64 {
    if side == 0 {
        1.0 - t
    } else {
        t
    }
}

/// Boolean-sum TFI value at an arbitrary parametric point.
pub fn tfi_point(spec: &BoundarySpec, p: ParamPoint) -> Result<PhysPoint> {
    let f = |q: ParamPoint| eval_boundary(spec, q);
    let mut out = [0.0; 3];
    let mut acc = |w: f64, v: PhysPoint| {
        for c in 0..3 {
            out[c] += w * v[c];
        }
    };
    match spec.dim() {
        Dim::Two => {
            let [xi, eta, _] = p;
            for a in 0..2 {
                let av = a as f64;
                acc(blend(a, xi), f([av, eta, 0.0])?);
                acc(blend(a, eta), f([xi, av, 0.0])?);
            }
            for a in 0..2 {
                for b in 0..2 {
                    acc(-blend(a, xi) * blend(b, eta), f([a as f64, b as f64, 0.0])?);
                }
            }
        }
        Dim::Three => {
            let [xi, eta, zeta] = p;
            for a in 0..2 {
                let av = a as f64;
                acc(blend(a, xi), f([av, eta, zeta])?);
                acc(blend(a, eta), f([xi, av, zeta])?);
                acc(blend(a, zeta), f([xi, eta, av])?);
            }
            for a in 0..2 {
                for b in 0..2 {
                    let (av, bv) = (a as f64, b as f64);
                    acc(-blend(a, xi) * blend(b, eta), f([av, bv, zeta])?);
                    acc(-blend(a, eta) * blend(b, zeta), f([xi, av, bv])?);
                    acc(-blend(a, zeta) * blend(b, xi), f([bv, eta, av])?);
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        let w = blend(a, xi) * blend(b, eta) * blend(c, zeta);
                        acc(w, f([a as f64, b as f64, c as f64])?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Generates a structured grid by transfinite interpolation on a uniform
/// parametric lattice. Boundary nodes are taken directly from the boundary map.
pub fn tfi_generate(spec: &BoundarySpec, dims: [usize; 3]) -> Result<StructuredGrid> {
    let dim = spec.dim();
    check_dims(dim, dims)?;
    let mut points = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let mut p = [StructuredGrid::param(i, dims[0]), StructuredGrid::param(j, dims[1]), 0.0];
                if dim == Dim::Three {
                    p[2] = StructuredGrid::param(k, dims[2]);
                }
                let on_boundary = p[..dim.n()].iter().any(|&c| c == 0.0 || c == 1.0);
                points.push(if on_boundary {
                    eval_boundary(spec, p)?
                } else {
                    tfi_point(spec, p)?
                });
            }
        }
    }
    StructuredGrid::new(dim, dims, points)
}
