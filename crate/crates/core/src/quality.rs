//! Cell-quality metrics for structured quad and hex grids.
//!
//! Hexahedron corners are addressed as `a + 2b + 4c` for the logical offsets
//! `(a, b, c)` in `{0, 1}^3`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};
use crate::geometry::Dim;
use crate::grid::StructuredGrid;
use crate::vec3::{self, Vec3};

/// Largest fraction of non-positive cells a valid mesh may contain.
pub const VALIDITY_THRESHOLD: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub min_angle: f64,
    pub max_angle: f64,
    pub equiangle_skewness: f64,
    pub aspect_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid_skewness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_orthogonality_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_orthogonality_max: Option<f64>,
    pub negative_volume_fraction: f64,
    pub valid: bool,
}

fn cells(grid: &StructuredGrid) -> impl Iterator<Item = [usize; 3]> {
    let [ni, nj, nk] = grid.dims();
    let nk = match grid.dim() {
        Dim::Two => 1,
        Dim::Three => nk - 1,
    };
    (0..nk).flat_map(move |k| (0..nj - 1).flat_map(move |j| (0..ni - 1).map(move |i| [i, j, k])))
}

fn hex_corners(grid: &StructuredGrid, [i, j, k]: [usize; 3]) -> [Vec3; 8] {
    std::array::from_fn(|v| grid.at(i + (v & 1), j + ((v >> 1) & 1), k + ((v >> 2) & 1)))
}

fn quad_corners(grid: &StructuredGrid, [i, j, _]: [usize; 3]) -> [Vec3; 4] {
    [grid.at(i, j, 0), grid.at(i + 1, j, 0), grid.at(i + 1, j + 1, 0), grid.at(i, j + 1, 0)]
}

fn corner_index(axis: usize, side: usize, u: usize, v: usize) -> usize {
    // The two in-face axes follow `axis` cyclically.
    let mut off = [0; 3];
    off[axis] = side;
    off[(axis + 1) % 3] = u;
    off[(axis + 2) % 3] = v;
    off[0] + 2 * off[1] + 4 * off[2]
}

/// The six faces of a hex, each as four corner indices in cyclic order.
/// Face `2 * axis + side`.
fn hex_faces() -> [[usize; 4]; 6] {
    std::array::from_fn(|f| {
        let (axis, side) = (f / 2, f % 2);
        [
            corner_index(axis, side, 0, 0),
            corner_index(axis, side, 1, 0),
            corner_index(axis, side, 1, 1),
            corner_index(axis, side, 0, 1),
        ]
    })
}

fn degenerate(cell: [usize; 3], reason: &str) -> MeshError {
    MeshError::DegenerateCell { cell, reason: reason.to_string() }
}

/// Corner angles of a quad in degrees.
fn quad_angles(q: [Vec3; 4], cell: [usize; 3]) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for c in 0..4 {
        let prev = vec3::sub(q[(c + 3) % 4], q[c]);
        let next = vec3::sub(q[(c + 1) % 4], q[c]);
        out[c] = vec3::angle_deg(prev, next).ok_or_else(|| degenerate(cell, "zero-length edge"))?;
    }
    Ok(out)
}

fn for_each_face(grid: &StructuredGrid, mut f: impl FnMut([Vec3; 4], [usize; 3]) -> Result<()>) -> Result<()> {
    let faces = hex_faces();
    for cell in cells(grid) {
        match grid.dim() {
            Dim::Two => f(quad_corners(grid, cell), cell)?,
            Dim::Three => {
                let h = hex_corners(grid, cell);
                for face in &faces {
                    f(face.map(|v| h[v]), cell)?;
                }
            }
        }
    }
    Ok(())
}

/// Smallest and largest face-corner angle over the mesh, in degrees.
pub fn included_angles(grid: &StructuredGrid) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for_each_face(grid, |q, cell| {
        for a in quad_angles(q, cell)? {
            lo = lo.min(a);
            hi = hi.max(a);
        }
        Ok(())
    })?;
    Ok((lo, hi))
}

fn face_skewness(min: f64, max: f64) -> f64 {
    ((max - 90.0) / 90.0).max((90.0 - min) / 90.0)
}

/// Worst normalized deviation of a face angle from 90 degrees.
pub fn equiangle_skewness(grid: &StructuredGrid) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for_each_face(grid, |q, cell| {
        let a = quad_angles(q, cell)?;
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(face_skewness(lo, hi));
        Ok(())
    })?;
    Ok(worst)
}

/// Largest ratio of per-direction mean edge lengths over all cells.
pub fn aspect_ratio(grid: &StructuredGrid) -> Result<f64> {
    let mut worst: f64 = 1.0;
    for cell in cells(grid) {
        let mut means = Vec::with_capacity(3);
        match grid.dim() {
            Dim::Two => {
                let q = quad_corners(grid, cell);
                means.push(0.5 * (vec3::dist(q[0], q[1]) + vec3::dist(q[3], q[2])));
                means.push(0.5 * (vec3::dist(q[0], q[3]) + vec3::dist(q[1], q[2])));
            }
            Dim::Three => {
                let h = hex_corners(grid, cell);
                for axis in 0..3 {
                    let step = 1 << axis;
                    let sum: f64 = (0..8)
                        .filter(|v| v & step == 0)
                        .map(|v| vec3::dist(h[v], h[v + step]))
                        .sum();
                    means.push(sum / 4.0);
                }
            }
        }
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(0.0, f64::max);
        if !(lo > 0.0) {
            return Err(degenerate(cell, "zero mean edge length along a direction"));
        }
        worst = worst.max(hi / lo);
    }
    Ok(worst)
}

fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    for p in points {
        c = vec3::add(c, *p);
    }
    vec3::scale(c, 1.0 / points.len() as f64)
}

/// Outward face normal from the diagonal cross product, unnormalized.
fn face_normal(h: &[Vec3; 8], axis: usize, side: usize) -> Vec3 {
    let c = |u, v| h[corner_index(axis, side, u, v)];
    let d1 = vec3::sub(c(1, 1), c(0, 0));
    let d2 = vec3::sub(c(0, 1), c(1, 0));
    let n = vec3::cross(d1, d2);
    if side == 0 {
        vec3::scale(n, -1.0)
    } else {
        n
    }
}

fn unit(v: Vec3) -> Option<Vec3> {
    let n = vec3::norm(v);
    (n > 0.0).then(|| vec3::scale(v, 1.0 / n))
}

fn require_3d(grid: &StructuredGrid, what: &str) -> Result<()> {
    match grid.dim() {
        Dim::Three => Ok(()),
        Dim::Two => Err(MeshError::DimensionMismatch(format!("{what} is defined for 3D grids only"))),
    }
}

/// `1 - min_face dot(n, c)` per cell, maximized over cells, with `n` the unit
/// outward face normal and `c` the unit offset from the cell centroid to the
/// face centroid. Dots below zero count as zero.
pub fn centroid_skewness(grid: &StructuredGrid) -> Result<f64> {
    require_3d(grid, "centroid skewness")?;
    let faces = hex_faces();
    let mut worst: f64 = 0.0;
    for cell in cells(grid) {
        let h = hex_corners(grid, cell);
        let cc = centroid(&h);
        let mut min_dot: f64 = 1.0;
        for (f, face) in faces.iter().enumerate() {
            let fc = centroid(&face.map(|v| h[v]));
            let off = unit(vec3::sub(fc, cc)).ok_or_else(|| degenerate(cell, "coincident centroids"))?;
            let n = unit(face_normal(&h, f / 2, f % 2)).ok_or_else(|| degenerate(cell, "zero-area face"))?;
            min_dot = min_dot.min(vec3::dot(n, off).clamp(0.0, 1.0));
        }
        worst = worst.max(1.0 - min_dot);
    }
    Ok(worst)
}

/// Angle between each shared face's normal and the line joining the two cell
/// centroids; per-cell maximum over its shared faces, then `(mean, max)` over
/// cells, in degrees.
pub fn non_orthogonality(grid: &StructuredGrid) -> Result<(f64, f64)> {
    require_3d(grid, "non-orthogonality")?;
    let [ni, nj, nk] = grid.dims();
    let cdims = [ni - 1, nj - 1, nk - 1];
    if cdims.iter().all(|&n| n < 2) {
        return Err(MeshError::GridTooSmall("non-orthogonality needs two cells along some axis".into()));
    }
    let cidx = |c: [usize; 3]| c[0] + cdims[0] * (c[1] + cdims[1] * c[2]);
    let all: Vec<[usize; 3]> = cells(grid).collect();
    let centroids: Vec<Vec3> = all.iter().map(|&c| centroid(&hex_corners(grid, c))).collect();
    let mut per_cell = vec![0.0f64; all.len()];
    for &cell in &all {
        let h = hex_corners(grid, cell);
        for axis in 0..3 {
            if cell[axis] + 1 >= cdims[axis] {
                continue;
            }
            let mut nb = cell;
            nb[axis] += 1;
            let (a, b) = (cidx(cell), cidx(nb));
            let line = vec3::sub(centroids[b], centroids[a]);
            let angle = vec3::angle_deg(face_normal(&h, axis, 1), line)
                .ok_or_else(|| degenerate(cell, "zero-area face or coincident centroids"))?;
            per_cell[a] = per_cell[a].max(angle);
            per_cell[b] = per_cell[b].max(angle);
        }
    }
    let max = per_cell.iter().copied().fold(0.0, f64::max);
    let mean = per_cell.iter().sum::<f64>() / per_cell.len() as f64;
    Ok((mean, max))
}

fn tet_volume(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    vec3::dot(vec3::sub(b, a), vec3::cross(vec3::sub(c, a), vec3::sub(d, a))) / 6.0
}

/// Five-tetrahedron hex volume, signed.
const HEX_TETS: [[usize; 4]; 5] = [[0, 1, 2, 4], [3, 2, 1, 7], [5, 1, 4, 7], [6, 4, 2, 7], [1, 2, 4, 7]];

/// Signed cell volume (area in 2D).
pub fn cell_volume(grid: &StructuredGrid, cell: [usize; 3]) -> f64 {
    match grid.dim() {
        Dim::Two => {
            let q = quad_corners(grid, cell);
            0.5 * (0..4)
                .map(|c| {
                    let (p, n) = (q[c], q[(c + 1) % 4]);
                    p[0] * n[1] - n[0] * p[1]
                })
                .sum::<f64>()
        }
        Dim::Three => {
            let h = hex_corners(grid, cell);
            HEX_TETS.iter().map(|t| tet_volume(h[t[0]], h[t[1]], h[t[2]], h[t[3]])).sum()
        }
    }
}

/// Fraction of cells with non-positive volume and whether it is within
/// [`VALIDITY_THRESHOLD`].
pub fn mesh_validity(grid: &StructuredGrid) -> (f64, bool) {
    let bad = cells(grid).filter(|&c| cell_volume(grid, c) <= 0.0).count();
    let fraction = bad as f64 / grid.num_cells() as f64;
    (fraction, fraction <= VALIDITY_THRESHOLD)
}

pub fn quality_report(grid: &StructuredGrid) -> Result<QualityReport> {
    let (min_angle, max_angle) = included_angles(grid)?;
    let equiangle_skewness = equiangle_skewness(grid)?;
    let aspect_ratio = aspect_ratio(grid)?;
    let (centroid_skewness, non_orthogonality_mean, non_orthogonality_max) = match grid.dim() {
        Dim::Two => (None, None, None),
        Dim::Three => {
            let (mean, max) = non_orthogonality(grid)?;
            (Some(centroid_skewness(grid)?), Some(mean), Some(max))
        }
    };
    let (negative_volume_fraction, valid) = mesh_validity(grid);
    Ok(QualityReport {
        min_angle,
        max_angle,
        equiangle_skewness,
        aspect_ratio,
        centroid_skewness,
        non_orthogonality_mean,
        non_orthogonality_max,
        negative_volume_fraction,
        valid,
    })
}

impl QualityReport {
    /// One `key value` line per metric, 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} {v:.8e}");
            }
        };
        line("min_angle", Some(self.min_angle));
        line("max_angle", Some(self.max_angle));
        line("equiangle_skewness", Some(self.equiangle_skewness));
        line("aspect_ratio", Some(self.aspect_ratio));
        line("centroid_skewness", self.centroid_skewness);
        line("non_orthogonality_mean", self.non_orthogonality_mean);
        line("non_orthogonality_max", self.non_orthogonality_max);
        line("negative_volume_fraction", Some(self.negative_volume_fraction));
        let _ = writeln!(s, "validity {}", if self.valid { "Y" } else { "N" });
        s
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| MeshError::parse(origin, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_grid(n: [usize; 3], size: [f64; 3]) -> StructuredGrid {
        StructuredGrid::from_fn(Dim::Three, n, |i, j, k| {
            [
                size[0] * i as f64 / (n[0] - 1) as f64,
                size[1] * j as f64 / (n[1] - 1) as f64,
                size[2] * k as f64 / (n[2] - 1) as f64,
            ]
        })
        .unwrap()
    }

    fn sheared(n: usize) -> StructuredGrid {
        box_grid([n; 3], [1.0; 3]).map_points(|p| [p[0] + 0.5 * p[2], p[1], p[2]]).unwrap()
    }

    #[test]
    fn uniform_report() {
        let r = quality_report(&box_grid([5; 3], [1.0; 3])).unwrap();
        assert_eq!((r.min_angle, r.max_angle), (90.0, 90.0));
        assert_eq!(r.equiangle_skewness, 0.0);
        assert!((r.aspect_ratio - 1.0).abs() < 1e-12);
        assert!(r.centroid_skewness.unwrap() < 1e-12);
        assert_eq!((r.non_orthogonality_mean, r.non_orthogonality_max), (Some(0.0), Some(0.0)));
        assert_eq!((r.negative_volume_fraction, r.valid), (0.0, true));
    }

    #[test]
    fn single_sheared_quad() {
        let g = StructuredGrid::new(
            Dim::Two,
            [2, 2, 1],
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [1.5, 1.0, 0.0]],
        )
        .unwrap();
        let (lo, hi) = included_angles(&g).unwrap();
        let expected = 1f64.atan2(0.5).to_degrees();
        assert!((lo - expected).abs() < 1e-12, "{lo}");
        assert!((hi - (180.0 - expected)).abs() < 1e-12, "{hi}");
    }

    #[test]
    fn rhombus_skewness() {
        let s = 60f64.to_radians();
        let g = StructuredGrid::new(
            Dim::Two,
            [2, 2, 1],
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [s.cos(), s.sin(), 0.0], [1.0 + s.cos(), s.sin(), 0.0]],
        )
        .unwrap();
        assert!((equiangle_skewness(&g).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_length_edge_is_reported() {
        let g = StructuredGrid::new(
            Dim::Two,
            [2, 2, 1],
            vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]],
        )
        .unwrap();
        assert!(matches!(included_angles(&g), Err(MeshError::DegenerateCell { cell: [0, 0, 0], .. })));
    }

    #[test]
    fn box_aspect_ratio() {
        assert!((aspect_ratio(&box_grid([2; 3], [2.0, 1.0, 1.0])).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sheared_hex_values() {
        let g = sheared(3);
        let cs = centroid_skewness(&g).unwrap();
        assert!((cs - (1.0 - 2.0 / 5f64.sqrt())).abs() < 1e-12, "{cs}");
        let (_, max) = non_orthogonality(&g).unwrap();
        assert!((max - 0.5f64.atan().to_degrees()).abs() < 1e-10, "{max}");
        let r = quality_report(&g).unwrap();
        assert_eq!(r.centroid_skewness, Some(cs));
        assert_eq!(r.non_orthogonality_max, Some(max));
    }

    #[test]
    fn hex_volume_is_exact_for_boxes() {
        let g = box_grid([2; 3], [2.0, 3.0, 0.5]);
        assert!((cell_volume(&g, [0, 0, 0]) - 3.0).abs() < 1e-14);
        let mirrored = g.map_points(|p| [-p[0], p[1], p[2]]).unwrap();
        assert!(cell_volume(&mirrored, [0, 0, 0]) < 0.0);
    }

    #[test]
    fn validity_threshold() {
        // Invert the last cell by moving its far corner through it.
        let single = |n: [usize; 3]| {
            let g = box_grid(n, [1.0; 3]);
            let mut pts = g.points().to_vec();
            let idx = g.index(n[0] - 1, n[1] - 1, n[2] - 1);
            pts[idx] = [-10.0, -10.0, -10.0];
            StructuredGrid::new(Dim::Three, n, pts).unwrap()
        };
        let g = single([11, 11, 11]);
        assert_eq!(g.num_cells(), 1000);
        assert_eq!(mesh_validity(&g), (0.001, true));
        let g = single([11, 11, 2]);
        assert_eq!(g.num_cells(), 100);
        assert_eq!(mesh_validity(&g), (0.01, false));
    }

    #[test]
    fn report_text_format() {
        let r = quality_report(&box_grid([3; 3], [1.0; 3])).unwrap();
        let t = r.to_text();
        assert!(t.starts_with("min_angle 9.00000000e1\n"));
        assert!(t.ends_with("validity Y\n"));
        assert_eq!(t.lines().count(), 9);
        let back = QualityReport::from_toml_str(&r.to_toml_string(), Path::new("r")).unwrap();
        assert_eq!(back, r);
        let g2 = StructuredGrid::from_fn(Dim::Two, [3, 3, 1], |i, j, _| [i as f64, j as f64, 0.0]).unwrap();
        let r2 = quality_report(&g2).unwrap();
        assert!(r2.centroid_skewness.is_none() && r2.non_orthogonality_max.is_none());
        assert_eq!(r2.to_text().lines().count(), 6);
    }
}
