//! Randomized invariants across modules.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::elliptic::{elliptic_smooth, winslow_coefficients, SmoothOptions};
use crate::geometry::{builtin_geometry, eval_boundary, sample_training_batch, Dim, ParamPoint};
use crate::grid::StructuredGrid;
use crate::io::{parse_plot3d, parse_vtk, plot3d_string, vtk_string};
use crate::network::{mlp_init, AdamState, LrSchedule, ParamGradient};
use crate::quality::{
    aspect_ratio, cell_volume, equiangle_skewness, included_angles, mesh_validity, quality_report,
    VALIDITY_THRESHOLD,
};
use crate::stencil::{build_stencil, fd_derivatives, DerivativeBundle, StencilConfig};
use crate::tfi::tfi_generate;
use crate::trainer::{pde_residual, project_gradients, total_loss, total_loss_grad_u, UncertaintyParams};
use crate::vec3::{self, Vec3};

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [vec3::dot(m[0], v), vec3::dot(m[1], v), vec3::dot(m[2], v)]
}

fn rotation(axis: Vec3, angle: f64) -> Mat3 {
    let n = vec3::norm(axis);
    let [x, y, z] = vec3::scale(axis, 1.0 / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn axis() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0..1.0f64).prop_filter("nonzero axis", |a| vec3::norm(*a) > 0.1)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Per-component quadratic `a + b.p + p^T Q p` with symmetric `Q`.
#[derive(Clone, Debug)]
struct Quadratic {
    a: Vec3,
    b: [Vec3; 3],
    q: [Mat3; 3],
}

impl Quadratic {
    fn eval(&self, p: ParamPoint) -> Vec3 {
        let mut out = [0.0; 3];
        for c in 0..3 {
            let qp = mat_vec(&self.q[c], p);
            out[c] = self.a[c] + vec3::dot(self.b[c], p) + vec3::dot(p, qp);
        }
        out
    }

    fn derivatives(&self, p: ParamPoint) -> DerivativeBundle {
        let mut d = DerivativeBundle::default();
        for c in 0..3 {
            let qp = mat_vec(&self.q[c], p);
            for a in 0..3 {
                d.first[a][c] = self.b[c][a] + 2.0 * qp[a];
                d.second[a][c] = 2.0 * self.q[c][a][a];
            }
            d.mixed[0][c] = 2.0 * self.q[c][0][1];
            d.mixed[1][c] = 2.0 * self.q[c][1][2];
            d.mixed[2][c] = 2.0 * self.q[c][2][0];
        }
        d
    }
}

fn quadratic() -> impl Strategy<Value = Quadratic> {
    let v = || prop::array::uniform3(-1.0..1.0f64);
    (v(), prop::array::uniform3(v()), prop::array::uniform3(prop::array::uniform3(v()))).prop_map(|(a, b, raw)| {
        let mut q = [[[0.0; 3]; 3]; 3];
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    q[c][i][j] = 0.5 * (raw[c][i][j] + raw[c][j][i]);
                }
            }
        }
        Quadratic { a, b, q }
    })
}

/// A 4x4x4 lattice with interior nodes jittered by at most `0.15` of the
/// spacing.
fn jittered_grid() -> impl Strategy<Value = StructuredGrid> {
    prop::collection::vec(prop::array::uniform3(-0.05..0.05f64), 64).prop_map(|jit| {
        StructuredGrid::from_fn(Dim::Three, [4, 4, 4], |i, j, k| {
            let n = i + 4 * (j + 4 * k);
            let base = [i as f64 / 3.0, j as f64 / 3.0, k as f64 / 3.0];
            vec3::add(base, jit[n])
        })
        .unwrap()
    })
}

fn all_cells(dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    let [ni, nj, nk] = dims;
    (0..nk - 1).flat_map(move |k| (0..nj - 1).flat_map(move |j| (0..ni - 1).map(move |i| [i, j, k])))
}

proptest! {
    #[test]
    fn fd_is_exact_on_quadratics(
        f in quadratic(),
        c in prop::array::uniform3(0.2..0.8f64),
        h in prop::array::uniform3(0.01..0.15f64),
    ) {
        let cfg = StencilConfig { h };
        let batch = build_stencil(Dim::Three, &[c], &cfg).unwrap();
        let out: Vec<_> = batch.points.iter().map(|&p| f.eval(p)).collect();
        let got = fd_derivatives(Dim::Three, &out, &cfg);
        let want = f.derivatives(c);
        let pairs = got.first.iter().chain(&got.second).chain(&got.mixed)
            .zip(want.first.iter().chain(&want.second).chain(&want.mixed));
        for (g, w) in pairs {
            for k in 0..3 {
                prop_assert!((g[k] - w[k]).abs() < 1e-9, "{g:?} vs {w:?}");
            }
        }
    }

    #[test]
    fn stencil_stays_in_the_unit_cube(
        centers in prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 1..20),
        h in 0.001..0.2f64,
    ) {
        let cfg = StencilConfig::uniform(h);
        let centers: Vec<ParamPoint> =
            centers.into_iter().map(|p| p.map(|x| h + x * (1.0 - 2.0 * h))).collect();
        let batch = build_stencil(Dim::Three, &centers, &cfg).unwrap();
        prop_assert_eq!(batch.points.len(), 19 * centers.len());
        prop_assert!(batch.points.iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn winslow_alphas_positive_for_nondegenerate_jacobians(j in prop::array::uniform3(prop::array::uniform3(-2.0..2.0f64))) {
        let det = vec3::dot(j[0], vec3::cross(j[1], j[2]));
        prop_assume!(det.abs() > 1e-3);
        let d = DerivativeBundle { first: j, ..Default::default() };
        let k = winslow_coefficients(Dim::Three, &d);
        prop_assert!(k.alpha1 > 0.0 && k.alpha2 > 0.0 && k.alpha3 > 0.0);
    }

    #[test]
    fn residual_is_rotation_invariant_and_scales(
        f in quadratic(),
        c in prop::array::uniform3(0.2..0.8f64),
        ax in axis(),
        angle in -3.0..3.0f64,
        s in 0.3..3.0f64,
    ) {
        let d = f.derivatives(c);
        let r = rotation(ax, angle);
        let map = |v: &[Vec3; 3]| v.map(|x| vec3::scale(mat_vec(&r, x), s));
        let moved = DerivativeBundle { first: map(&d.first), second: map(&d.second), mixed: map(&d.mixed) };
        let (_, e0) = pde_residual(Dim::Three, &d);
        let (_, e1) = pde_residual(Dim::Three, &moved);
        // coefficients are quartic and second derivatives linear in the map
        prop_assert!(close(e1, e0 * s.powi(10), 1e-9), "{e0} {e1}");
    }

    #[test]
    fn projection_never_conflicts(
        g1 in prop::collection::vec(-1.0..1.0f64, 12),
        g2 in prop::collection::vec(-1.0..1.0f64, 12),
    ) {
        let (a, b) = (ParamGradient { values: g1 }, ParamGradient { values: g2 });
        let p = project_gradients(&a, &b).unwrap();
        let dot = a.dot(&b);
        if dot >= 0.0 {
            let sum: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
            prop_assert_eq!(p.values, sum);
        } else {
            prop_assert!(p.dot(&a) >= -1e-12 && p.dot(&b) >= -1e-12);
            let (na, nb) = (a.dot(&a), b.dot(&b));
            for i in 0..12 {
                let want = a.values[i] - dot / nb * b.values[i] + b.values[i] - dot / na * a.values[i];
                prop_assert!((p.values[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reweighted_loss_gradient_matches_differences(
        l1 in 0.0..5.0f64,
        l2 in 0.0..5.0f64,
        s in prop::array::uniform2(-2.0..2.0f64),
    ) {
        let u = UncertaintyParams { log_a_sq: s };
        let g = total_loss_grad_u(l1, l2, &u);
        let eps = 1e-6;
        for i in 0..2 {
            let (mut up, mut dn) = (u, u);
            up.log_a_sq[i] += eps;
            dn.log_a_sq[i] -= eps;
            let fd = (total_loss(l1, l2, &up, true) - total_loss(l1, l2, &dn, true)) / (2.0 * eps);
            prop_assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
        prop_assert_eq!(total_loss(l1, l2, &u, false), l1 + l2);
    }

    #[test]
    fn angles_invariant_under_similarity(
        grid in jittered_grid(),
        ax in axis(),
        angle in -3.0..3.0f64,
        s in 0.1..10.0f64,
        t in prop::array::uniform3(-5.0..5.0f64),
    ) {
        let r = rotation(ax, angle);
        let moved = grid.map_points(|p| vec3::add(vec3::scale(mat_vec(&r, p), s), t)).unwrap();
        let (lo0, hi0) = included_angles(&grid).unwrap();
        let (lo1, hi1) = included_angles(&moved).unwrap();
        prop_assert!(close(lo0, lo1, 1e-9) && close(hi0, hi1, 1e-9));
        prop_assert!(close(equiangle_skewness(&grid).unwrap(), equiangle_skewness(&moved).unwrap(), 1e-9));
        prop_assert!(close(aspect_ratio(&grid).unwrap(), aspect_ratio(&moved).unwrap(), 1e-9));
        for cell in all_cells(grid.dims()) {
            prop_assert!(close(cell_volume(&moved, cell), s.powi(3) * cell_volume(&grid, cell), 1e-9));
        }
    }

    #[test]
    fn report_invariants(grid in jittered_grid()) {
        let r = quality_report(&grid).unwrap();
        prop_assert!(r.min_angle <= r.max_angle);
        prop_assert!((0.0..=1.0).contains(&r.equiangle_skewness));
        prop_assert!(r.equiangle_skewness >= ((r.max_angle - 90.0) / 90.0).max((90.0 - r.min_angle) / 90.0) - 1e-12);
        prop_assert!(r.aspect_ratio >= 1.0);
        prop_assert_eq!(r.valid, r.negative_volume_fraction <= VALIDITY_THRESHOLD);
        let mirrored = grid.map_points(|[x, y, z]| [-x, y, z]).unwrap();
        for cell in all_cells(grid.dims()) {
            prop_assert!(close(cell_volume(&mirrored, cell), -cell_volume(&grid, cell), 1e-12));
        }
        prop_assert_eq!(mesh_validity(&mirrored), (1.0, false));
    }

    #[test]
    fn exports_round_trip(grid in jittered_grid(), s in -30i32..30) {
        let grid = grid.map_points(|p| vec3::scale(p, 10f64.powi(s))).unwrap();
        let o = std::path::Path::new("p");
        prop_assert_eq!(&parse_vtk(&vtk_string(&grid), o).unwrap(), &grid);
        prop_assert_eq!(&parse_plot3d(&plot3d_string(&grid), o).unwrap(), &grid);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tfi_reproduces_the_boundary(ni in 2usize..7, nj in 2usize..7, nk in 2usize..7, geo in 0usize..3) {
        let name = ["unit_cube", "sheared_cube", "semi_cylindrical_shell"][geo];
        let spec = builtin_geometry(name, &BTreeMap::new()).unwrap();
        let g = tfi_generate(&spec, [ni, nj, nk]).unwrap();
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    if g.is_boundary(i, j, k) {
                        let p = [StructuredGrid::param(i, ni), StructuredGrid::param(j, nj), StructuredGrid::param(k, nk)];
                        prop_assert_eq!(g.at(i, j, k), eval_boundary(&spec, p).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn training_batches_respect_containment(seed in any::<u64>(), h in 0.001..0.2f64, ni in 1usize..40, ns in 1usize..40) {
        let spec = builtin_geometry("semi_cylindrical_shell", &BTreeMap::new()).unwrap();
        let b = sample_training_batch(&spec, ni, ns, h, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!((b.interior.len(), b.surface.len()), (ni, ns));
        prop_assert!(b.interior.iter().flatten().all(|&x| x >= h && x <= 1.0 - h));
        for (p, target) in &b.surface {
            prop_assert!(p.iter().any(|&x| x == 0.0 || x == 1.0));
            prop_assert_eq!(*target, eval_boundary(&spec, *p).unwrap());
        }
    }

    #[test]
    fn forward_is_deterministic_and_pointwise(
        seed in any::<u64>(),
        pts in prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 1..12),
    ) {
        let net = mlp_init(&[3, 7, 5, 3], seed).unwrap();
        prop_assert_eq!(&net, &mlp_init(&[3, 7, 5, 3], seed).unwrap());
        let (all, _) = net.forward(&pts, false).unwrap();
        for (p, y) in pts.iter().zip(&all) {
            let (one, _) = net.forward(&[*p], false).unwrap();
            for c in 0..3 {
                prop_assert!((one[0][c] - y[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_ignores_zero_gradients(params in prop::collection::vec(-5.0..5.0f64, 1..30), steps in 1usize..20) {
        let mut state = AdamState::new(params.len(), LrSchedule::default());
        let mut p = params.clone();
        let zero = vec![0.0; p.len()];
        for _ in 0..steps {
            state.step(&mut p, &zero).unwrap();
        }
        prop_assert_eq!(p, params);
        prop_assert_eq!(state.t, steps as u64);
    }

    #[test]
    fn smoother_reports_convergence_honestly(tol_exp in -9i32..-2, iters in 1usize..60, omega in 0.5..1.9f64) {
        let spec = builtin_geometry("annulus_quarter", &BTreeMap::new()).unwrap();
        let init = tfi_generate(&spec, [9, 9, 1]).unwrap();
        let opts = SmoothOptions { max_iters: iters, tol: 10f64.powi(tol_exp), relaxation: omega };
        let r = elliptic_smooth(&init, &opts).unwrap();
        prop_assert_eq!(r.converged, r.final_residual <= opts.tol);
        prop_assert!(r.iterations <= iters);
    }
}
