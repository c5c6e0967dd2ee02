//! Boundary specifications: the map from the boundary of the parametric
//! square/cube to physical space, plus training-point sampling.
//!
//! Face parameterization convention. A 3D face fixes one parametric axis and
//! is parameterized by the remaining two in ascending axis order:
//!
//! | face          | (s, t)     |
//! |---------------|------------|
//! | `xi0`, `xi1`  | (eta, zeta) |
//! | `eta0`, `eta1`| (xi, zeta) |
//! | `zeta0`,`zeta1`| (xi, eta) |
//!
//! A 2D edge fixes one axis and is parameterized by the other.
//!
//! Built-in geometries are analytic volume maps restricted to the boundary:
//!
//! * `unit_cube {lx, ly, lz}`: `(lx*xi, ly*eta, lz*zeta)`, all extents default 1.
//! * `sheared_cube {shear}`: `(xi + shear*zeta, eta, zeta)`, shear default 0.5.
//! * `semi_cylindrical_shell {r_in, r_out, length}`: half annular shell,
//!   `r = r_in + xi*(r_out - r_in)`, `theta = pi*eta`,
//!   `(r cos theta, r sin theta, length*zeta)`; defaults 1, 2, 1.
//! * `unit_square {lx, ly}`: `(lx*xi, ly*eta)`.
//! * `annulus_quarter {r_in, r_out}`: `r = r_in + xi*(r_out - r_in)`,
//!   `theta = eta*pi/2`, `(r cos theta, r sin theta)`; defaults 1, 2.
//! * `sheared_quad {shear}`: `(xi + shear*eta, eta)`, shear default 0.5.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};
use crate::vec3::{self, Vec3};

/// Point of the parametric domain `[0,1]^dim` (third component zero in 2D).
pub type ParamPoint = Vec3;
/// Point of physical space (third component zero in 2D).
pub type PhysPoint = Vec3;

/// Absolute tolerance of the shared edge/corner consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn n(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    pub fn from_n(n: usize) -> Result<Dim> {
        match n {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            _ => Err(MeshError::DimensionMismatch(format!(
                "dimension must be 2 or 3, got {n}"
            ))),
        }
    }

    pub fn num_faces(self) -> usize {
        2 * self.n()
    }
}

/// Identifies a face (3D) or edge (2D) of the parametric domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FaceId {
    pub axis: usize,
    pub high: bool,
}

impl FaceId {
    pub const ALL: [FaceId; 6] = [
        FaceId { axis: 0, high: false },
        FaceId { axis: 0, high: true },
        FaceId { axis: 1, high: false },
        FaceId { axis: 1, high: true },
        FaceId { axis: 2, high: false },
        FaceId { axis: 2, high: true },
    ];

    pub fn all(dim: Dim) -> &'static [FaceId] {
        &Self::ALL[..dim.num_faces()]
    }

    pub fn index(self) -> usize {
        2 * self.axis + self.high as usize
    }

    pub fn name(self) -> &'static str {
        ["xi0", "xi1", "eta0", "eta1", "zeta0", "zeta1"][self.index()]
    }

    pub fn parse(s: &str) -> Option<FaceId> {
        Self::ALL.iter().copied().find(|f| f.name() == s)
    }

    fn fixed_value(self) -> f64 {
        if self.high {
            1.0
        } else {
            0.0
        }
    }

    /// Parametric axes spanning this face, in ascending order.
    pub fn free_axes(self, dim: Dim) -> Vec<usize> {
        (0..dim.n()).filter(|&a| a != self.axis).collect()
    }

    /// Embeds face parameters `(s, t)` into the parametric domain (`t` unused in 2D).
    pub fn embed(self, dim: Dim, s: f64, t: f64) -> ParamPoint {
        let mut p = [0.0; 3];
        p[self.axis] = self.fixed_value();
        let free = self.free_axes(dim);
        p[free[0]] = s;
        if let Some(&a) = free.get(1) {
            p[a] = t;
        }
        p
    }

    /// Face parameters of a parametric point lying on this face.
    pub fn params_of(self, dim: Dim, p: ParamPoint) -> (f64, f64) {
        let free = self.free_axes(dim);
        let s = p[free[0]];
        let t = free.get(1).map(|&a| p[a]).unwrap_or(0.0);
        (s, t)
    }

    fn contains(self, p: ParamPoint) -> bool {
        p[self.axis] == self.fixed_value()
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Analytic volume maps backing the built-in geometries.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticMap {
    UnitCube { lx: f64, ly: f64, lz: f64 },
    ShearedCube { shear: f64 },
    SemiCylindricalShell { r_in: f64, r_out: f64, length: f64 },
    UnitSquare { lx: f64, ly: f64 },
    AnnulusQuarter { r_in: f64, r_out: f64 },
    ShearedQuad { shear: f64 },
}

pub const BUILTIN_NAMES: [&str; 6] = [
    "unit_cube",
    "sheared_cube",
    "semi_cylindrical_shell",
    "unit_square",
    "annulus_quarter",
    "sheared_quad",
];

fn take_params(
    name: &str,
    params: &BTreeMap<String, f64>,
    defaults: &[(&str, f64)],
) -> Result<Vec<f64>> {
    for key in params.keys() {
        if !defaults.iter().any(|(k, _)| k == key) {
            return Err(MeshError::InvalidParam(format!(
                "`{name}` has no parameter `{key}`"
            )));
        }
    }
    defaults
        .iter()
        .map(|(k, d)| {
            let v = params.get(*k).copied().unwrap_or(*d);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(MeshError::InvalidParam(format!("`{k}` must be finite")))
            }
        })
        .collect()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(MeshError::InvalidParam(format!("`{name}` must be positive, got {v}")))
    }
}

impl AnalyticMap {
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<AnalyticMap> {
        let map = match name {
            "unit_cube" => {
                let v = take_params(name, params, &[("lx", 1.0), ("ly", 1.0), ("lz", 1.0)])?;
                positive("lx", v[0])?;
                positive("ly", v[1])?;
                positive("lz", v[2])?;
                AnalyticMap::UnitCube { lx: v[0], ly: v[1], lz: v[2] }
            }
            "sheared_cube" => {
                let v = take_params(name, params, &[("shear", 0.5)])?;
                AnalyticMap::ShearedCube { shear: v[0] }
            }
            "semi_cylindrical_shell" => {
                let v = take_params(
                    name,
                    params,
                    &[("r_in", 1.0), ("r_out", 2.0), ("length", 1.0)],
                )?;
                positive("r_in", v[0])?;
                positive("length", v[2])?;
                if v[0] >= v[1] {
                    return Err(MeshError::InvalidParam(format!(
                        "inner radius {} must be smaller than outer radius {}",
                        v[0], v[1]
                    )));
                }
                AnalyticMap::SemiCylindricalShell { r_in: v[0], r_out: v[1], length: v[2] }
            }
            "unit_square" => {
                let v = take_params(name, params, &[("lx", 1.0), ("ly", 1.0)])?;
                positive("lx", v[0])?;
                positive("ly", v[1])?;
                AnalyticMap::UnitSquare { lx: v[0], ly: v[1] }
            }
            "annulus_quarter" => {
                let v = take_params(name, params, &[("r_in", 1.0), ("r_out", 2.0)])?;
                positive("r_in", v[0])?;
                if v[0] >= v[1] {
                    return Err(MeshError::InvalidParam(format!(
                        "inner radius {} must be smaller than outer radius {}",
                        v[0], v[1]
                    )));
                }
                AnalyticMap::AnnulusQuarter { r_in: v[0], r_out: v[1] }
            }
            "sheared_quad" => {
                let v = take_params(name, params, &[("shear", 0.5)])?;
                AnalyticMap::ShearedQuad { shear: v[0] }
            }
            other => return Err(MeshError::UnknownGeometry(other.to_string())),
        };
        Ok(map)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticMap::UnitCube { .. } => "unit_cube",
            AnalyticMap::ShearedCube { .. } => "sheared_cube",
            AnalyticMap::SemiCylindricalShell { .. } => "semi_cylindrical_shell",
            AnalyticMap::UnitSquare { .. } => "unit_square",
            AnalyticMap::AnnulusQuarter { .. } => "annulus_quarter",
            AnalyticMap::ShearedQuad { .. } => "sheared_quad",
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match *self {
            AnalyticMap::UnitCube { lx, ly, lz } => vec![("lx", lx), ("ly", ly), ("lz", lz)],
            AnalyticMap::ShearedCube { shear } => vec![("shear", shear)],
            AnalyticMap::SemiCylindricalShell { r_in, r_out, length } => {
                vec![("r_in", r_in), ("r_out", r_out), ("length", length)]
            }
            AnalyticMap::UnitSquare { lx, ly } => vec![("lx", lx), ("ly", ly)],
            AnalyticMap::AnnulusQuarter { r_in, r_out } => vec![("r_in", r_in), ("r_out", r_out)],
            AnalyticMap::ShearedQuad { shear } => vec![("shear", shear)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn dim(&self) -> Dim {
        match self {
            AnalyticMap::UnitCube { .. }
            | AnalyticMap::ShearedCube { .. }
            | AnalyticMap::SemiCylindricalShell { .. } => Dim::Three,
            _ => Dim::Two,
        }
    }

    /// Evaluates the volume map at any parametric point.
    pub fn eval(&self, p: ParamPoint) -> PhysPoint {
        let [xi, eta, zeta] = p;
        match *self {
            AnalyticMap::UnitCube { lx, ly, lz } => [lx * xi, ly * eta, lz * zeta],
            AnalyticMap::ShearedCube { shear } => [xi + shear * zeta, eta, zeta],
            AnalyticMap::SemiCylindricalShell { r_in, r_out, length } => {
                let r = r_in + xi * (r_out - r_in);
                let th = PI * eta;
                [r * th.cos(), r * th.sin(), length * zeta]
            }
            AnalyticMap::UnitSquare { lx, ly } => [lx * xi, ly * eta, 0.0],
            AnalyticMap::AnnulusQuarter { r_in, r_out } => {
                let r = r_in + xi * (r_out - r_in);
                let th = FRAC_PI_2 * eta;
                [r * th.cos(), r * th.sin(), 0.0]
            }
            AnalyticMap::ShearedQuad { shear } => [xi + shear * eta, eta, 0.0],
        }
    }
}

/// Boundary data sampled on a uniform face-parameter grid.
///
/// `points[a * n + b]` sits at face parameters `(a/(m-1), b/(n-1))`; 2D edges
/// have `m == 1` and use `points[b]` at `b/(n-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFace {
    pub m: usize,
    pub n: usize,
    pub points: Vec<PhysPoint>,
}

/// Splits a coordinate `u` in `[0,1]` over `cells` intervals into (cell, fraction).
/// Snaps onto grid nodes so stored samples are reproduced exactly.
fn locate(u: f64, cells: usize) -> (usize, f64) {
    let x = u.clamp(0.0, 1.0) * cells as f64;
    let r = x.round();
    let x = if (x - r).abs() <= 1e-12 * cells as f64 { r } else { x };
    let i = (x.floor() as usize).min(cells - 1);
    (i, x - i as f64)
}

impl SampledFace {
    fn eval(&self, s: f64, t: f64) -> PhysPoint {
        if self.m == 1 {
            let (i, f) = locate(s, self.n - 1);
            if f == 0.0 {
                return self.points[i];
            }
            return lerp(self.points[i], self.points[i + 1], f);
        }
        let (a, fs) = locate(s, self.m - 1);
        let (b, ft) = locate(t, self.n - 1);
        let at = |a: usize, b: usize| self.points[a * self.n + b];
        if fs == 0.0 && ft == 0.0 {
            return at(a, b);
        }
        let lo = if ft == 0.0 { at(a, b) } else { lerp(at(a, b), at(a, b + 1), ft) };
        if fs == 0.0 {
            return lo;
        }
        let hi = if ft == 0.0 {
            at(a + 1, b)
        } else {
            lerp(at(a + 1, b), at(a + 1, b + 1), ft)
        };
        lerp(lo, hi, fs)
    }
}

fn lerp(a: Vec3, b: Vec3, f: f64) -> Vec3 {
    [
        (1.0 - f) * a[0] + f * b[0],
        (1.0 - f) * a[1] + f * b[1],
        (1.0 - f) * a[2] + f * b[2],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub enum FaceData {
    Analytic(AnalyticMap),
    Sampled(SampledFace),
}

/// The boundary map of a geometry: one descriptor per face (3D) or edge (2D),
/// stored in `FaceId::index` order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySpec {
    dim: Dim,
    faces: Vec<FaceData>,
}

impl BoundarySpec {
    /// Builds a spec and runs the shared edge/corner consistency check.
    pub fn new(dim: Dim, faces: Vec<FaceData>) -> Result<BoundarySpec> {
        if faces.len() != dim.num_faces() {
            return Err(MeshError::FaceCountMismatch {
                dim: dim.n(),
                expected: dim.num_faces(),
                found: faces.len(),
            });
        }
        for (id, face) in FaceId::all(dim).iter().zip(&faces) {
            match face {
                FaceData::Analytic(map) if map.dim() != dim => {
                    return Err(MeshError::DimensionMismatch(format!(
                        "face {id}: analytic map `{}` is {}D in a {}D spec",
                        map.name(),
                        map.dim().n(),
                        dim.n()
                    )));
                }
                FaceData::Sampled(g) => validate_sampled(dim, *id, g)?,
                _ => {}
            }
        }
        let spec = BoundarySpec { dim, faces };
        spec.check_consistency()?;
        Ok(spec)
    }

    pub fn from_map(map: AnalyticMap) -> BoundarySpec {
        let dim = map.dim();
        BoundarySpec {
            dim,
            faces: vec![FaceData::Analytic(map); dim.num_faces()],
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn face(&self, id: FaceId) -> &FaceData {
        &self.faces[id.index()]
    }

    /// Maximum discrepancy between neighbouring faces along their shared
    /// edges (3D) or corners (2D), with the faces and location involved.
    pub fn max_discrepancy(&self) -> (f64, FaceId, FaceId, ParamPoint) {
        let ids = FaceId::all(self.dim);
        let mut worst = (0.0, ids[0], ids[0], [0.0; 3]);
        for (ia, a) in ids.iter().enumerate() {
            for b in &ids[ia + 1..] {
                if a.axis == b.axis {
                    continue;
                }
                for p in shared_samples(self.dim, *a, *b, &self.faces) {
                    let d = vec3::dist(self.eval_face(*a, p), self.eval_face(*b, p));
                    // NaN compares false, so report it explicitly.
                    if d > worst.0 || d.is_nan() {
                        worst = (d, *a, *b, p);
                        if d.is_nan() {
                            return worst;
                        }
                    }
                }
            }
        }
        worst
    }

    fn check_consistency(&self) -> Result<()> {
        let (d, a, b, at) = self.max_discrepancy();
        if d > CONSISTENCY_TOL || d.is_nan() {
            return Err(MeshError::InconsistentBoundary {
                face_a: a.to_string(),
                face_b: b.to_string(),
                discrepancy: d,
                at,
            });
        }
        Ok(())
    }

    fn eval_face(&self, id: FaceId, p: ParamPoint) -> PhysPoint {
        match &self.faces[id.index()] {
            FaceData::Analytic(map) => {
                let mut q = p;
                q[id.axis] = id.fixed_value();
                map.eval(q)
            }
            FaceData::Sampled(g) => {
                let (s, t) = id.params_of(self.dim, p);
                g.eval(s, t)
            }
        }
    }

    /// The face used to evaluate `p`: the first face, in index order, that contains it.
    pub fn face_of(&self, p: ParamPoint) -> Option<FaceId> {
        FaceId::all(self.dim).iter().copied().find(|f| f.contains(p))
    }

    /// Resamples every face onto an `n x n` grid (2D edges: `n` points).
    pub fn to_sampled(&self, n: usize) -> Result<BoundarySpec> {
        if n < 2 {
            return Err(MeshError::InvalidParam("sample grids need n >= 2".into()));
        }
        let m = n;
        let faces = FaceId::all(self.dim)
            .iter()
            .map(|&id| {
                let grid = match self.dim {
                    Dim::Two => SampledFace {
                        m: 1,
                        n,
                        points: (0..n)
                            .map(|b| {
                                let s = b as f64 / (n - 1) as f64;
                                self.eval_face(id, id.embed(self.dim, s, 0.0))
                            })
                            .collect(),
                    },
                    Dim::Three => {
                        let mut points = Vec::with_capacity(m * n);
                        for a in 0..m {
                            for b in 0..n {
                                let s = a as f64 / (m - 1) as f64;
                                let t = b as f64 / (n - 1) as f64;
                                points.push(self.eval_face(id, id.embed(self.dim, s, t)));
                            }
                        }
                        SampledFace { m, n, points }
                    }
                };
                FaceData::Sampled(grid)
            })
            .collect();
        BoundarySpec::new(self.dim, faces)
    }
}

fn validate_sampled(dim: Dim, id: FaceId, g: &SampledFace) -> Result<()> {
    let ok_shape = match dim {
        Dim::Two => g.m == 1 && g.n >= 2,
        Dim::Three => g.m >= 2 && g.n >= 2,
    };
    if !ok_shape {
        return Err(MeshError::InvalidParam(format!(
            "face {id}: sampled grid must have m, n >= 2 (got m={}, n={})",
            g.m, g.n
        )));
    }
    if g.points.len() != g.m * g.n {
        return Err(MeshError::InvalidParam(format!(
            "face {id}: expected {} points, got {}",
            g.m * g.n,
            g.points.len()
        )));
    }
    if let Some(bad) = g.points.iter().position(|p| !vec3::is_finite(*p)) {
        return Err(MeshError::InvalidParam(format!(
            "face {id}: point {bad} is not finite"
        )));
    }
    Ok(())
}

/// Parametric points on the edge (or corner) shared by faces `a` and `b`.
fn shared_samples(dim: Dim, a: FaceId, b: FaceId, faces: &[FaceData]) -> Vec<ParamPoint> {
    let mut base = [0.0; 3];
    base[a.axis] = a.fixed_value();
    base[b.axis] = b.fixed_value();
    if dim == Dim::Two {
        return vec![base];
    }
    let free = 3 - a.axis - b.axis;
    let mut ts: Vec<f64> = (0..=32).map(|k| k as f64 / 32.0).collect();
    for id in [a, b] {
        if let FaceData::Sampled(g) = &faces[id.index()] {
            let cells = if id.free_axes(dim)[0] == free { g.m - 1 } else { g.n - 1 };
            ts.extend((0..=cells).map(|k| k as f64 / cells as f64));
        }
    }
    ts.into_iter()
        .map(|t| {
            let mut p = base;
            p[free] = t;
            p
        })
        .collect()
}

/// Builds one of the built-in geometries (see the module docs for formulas).
pub fn builtin_geometry(name: &str, params: &BTreeMap<String, f64>) -> Result<BoundarySpec> {
    let map = AnalyticMap::from_name(name, params)?;
    let spec = BoundarySpec::from_map(map);
    spec.check_consistency()?;
    Ok(spec)
}

/// Evaluates the boundary map `f` at a parametric point on the boundary.
pub fn eval_boundary(spec: &BoundarySpec, p: ParamPoint) -> Result<PhysPoint> {
    let face = spec.face_of(p).ok_or(MeshError::NotOnBoundary(p))?;
    Ok(spec.eval_face(face, p))
}

// ---------------------------------------------------------------------------
// Boundary files

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryFile {
    dimension: usize,
    faces: Vec<FaceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FaceRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    analytic: Option<AnalyticRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnalyticRecord {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    n: usize,
    points: Vec<f64>,
}

/// Parses a boundary file (TOML key-value tree) from a string.
pub fn parse_boundary_spec(text: &str, origin: &Path) -> Result<BoundarySpec> {
    let file: BoundaryFile =
        toml::from_str(text).map_err(|e| MeshError::parse(origin, e.to_string()))?;
    let dim = Dim::from_n(file.dimension)?;
    if file.faces.len() != dim.num_faces() {
        return Err(MeshError::FaceCountMismatch {
            dim: dim.n(),
            expected: dim.num_faces(),
            found: file.faces.len(),
        });
    }
    let mut slots: Vec<Option<FaceData>> = vec![None; dim.num_faces()];
    for rec in file.faces {
        let id = FaceId::parse(&rec.id)
            .filter(|id| id.axis < dim.n())
            .ok_or_else(|| MeshError::parse(origin, format!("unknown face id `{}`", rec.id)))?;
        let data = match (rec.analytic, rec.grid) {
            (Some(a), None) => FaceData::Analytic(AnalyticMap::from_name(&a.name, &a.params)?),
            (None, Some(g)) => FaceData::Sampled(grid_from_record(dim, id, g, origin)?),
            _ => {
                return Err(MeshError::parse(
                    origin,
                    format!("face `{id}` needs exactly one of `analytic` or `grid`"),
                ))
            }
        };
        if slots[id.index()].replace(data).is_some() {
            return Err(MeshError::parse(origin, format!("duplicate face `{id}`")));
        }
    }
    let faces = slots.into_iter().map(|f| f.expect("all faces present")).collect();
    BoundarySpec::new(dim, faces)
}

fn grid_from_record(dim: Dim, id: FaceId, g: GridRecord, origin: &Path) -> Result<SampledFace> {
    let (m, comps) = match dim {
        Dim::Two => (g.m.unwrap_or(1), 2),
        Dim::Three => (
            g.m.ok_or_else(|| MeshError::parse(origin, format!("face `{id}`: grid needs `m`")))?,
            3,
        ),
    };
    if dim == Dim::Two && m != 1 {
        return Err(MeshError::parse(origin, format!("edge `{id}`: grid must be 1 x n")));
    }
    if g.points.len() != m * g.n * comps {
        return Err(MeshError::parse(
            origin,
            format!(
                "face `{id}`: expected {} coordinates, got {}",
                m * g.n * comps,
                g.points.len()
            ),
        ));
    }
    let points = g
        .points
        .chunks(comps)
        .map(|c| [c[0], c[1], if comps == 3 { c[2] } else { 0.0 }])
        .collect();
    Ok(SampledFace { m, n: g.n, points })
}

/// Loads and validates a boundary file.
pub fn load_boundary_spec(path: impl AsRef<Path>) -> Result<BoundarySpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::io(path, e))?;
    parse_boundary_spec(&text, path)
}

/// Serializes a spec in the boundary-file format.
pub fn boundary_spec_to_string(spec: &BoundarySpec) -> String {
    let comps = spec.dim.n();
    let faces = FaceId::all(spec.dim)
        .iter()
        .map(|&id| {
            let (analytic, grid) = match spec.face(id) {
                FaceData::Analytic(map) => (
                    Some(AnalyticRecord { name: map.name().to_string(), params: map.params() }),
                    None,
                ),
                FaceData::Sampled(g) => (
                    None,
                    Some(GridRecord {
                        m: (spec.dim == Dim::Three).then_some(g.m),
                        n: g.n,
                        points: g.points.iter().flat_map(|p| p[..comps].to_vec()).collect(),
                    }),
                ),
            };
            FaceRecord { id: id.name().to_string(), analytic, grid }
        })
        .collect();
    let file = BoundaryFile { dimension: spec.dim.n(), faces };
    toml::to_string(&file).expect("boundary spec serializes")
}

pub fn save_boundary_spec(spec: &BoundarySpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, boundary_spec_to_string(spec)).map_err(|e| MeshError::io(path, e))
}

// ---------------------------------------------------------------------------
// Training points

/// Sampled interior stencil centers and surface (parameter, target) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub interior: Vec<ParamPoint>,
    pub surface: Vec<(ParamPoint, PhysPoint)>,
}

/// Draws interior points uniformly from `[h, 1-h]^dim` and surface points
/// uniformly over the faces, `n_surface / num_faces` per face with the
/// remainder assigned to the first faces.
pub fn sample_training_batch<R: Rng + ?Sized>(
    spec: &BoundarySpec,
    n_interior: usize,
    n_surface: usize,
    h: f64,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if n_interior == 0 || n_surface == 0 {
        return Err(MeshError::InvalidConfig("point counts must be at least 1".into()));
    }
    if !(h > 0.0 && h < 0.5) {
        return Err(MeshError::InvalidConfig(format!("stencil step {h} outside (0, 0.5)")));
    }
    let dim = spec.dim();
    let lo = h;
    let hi = 1.0 - h;
    let interior = (0..n_interior)
        .map(|_| {
            let mut p = [0.0; 3];
            for c in p.iter_mut().take(dim.n()) {
                *c = (lo + rng.gen::<f64>() * (hi - lo)).clamp(lo, hi);
            }
            p
        })
        .collect();

    let faces = FaceId::all(dim);
    let per_face = n_surface / faces.len();
    let extra = n_surface % faces.len();
    let mut surface = Vec::with_capacity(n_surface);
    for (k, &id) in faces.iter().enumerate() {
        let count = per_face + usize::from(k < extra);
        for _ in 0..count {
            let s = rng.gen::<f64>();
            let t = if dim == Dim::Three { rng.gen::<f64>() } else { 0.0 };
            let p = id.embed(dim, s, t);
            let owner = spec.face_of(p).unwrap_or(id);
            surface.push((p, spec.eval_face(owner, p)));
        }
    }
    Ok(TrainingBatch { interior, surface })
}
