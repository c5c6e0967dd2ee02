use crate::error::{MeshError, Result};
use crate::geometry::{Dim, PhysPoint};
use crate::vec3;

/// Structured lattice of physical points, `i` fastest, then `j`, then `k`.
/// 2D grids have `nk == 1` and zero `z` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    dim: Dim,
    dims: [usize; 3],
    points: Vec<PhysPoint>,
}

impl StructuredGrid {
    pub fn new(dim: Dim, dims: [usize; 3], points: Vec<PhysPoint>) -> Result<Self> {
        check_dims(dim, dims)?;
        let n = dims[0] * dims[1] * dims[2];
        if points.len() != n {
            return Err(MeshError::ShapeMismatch(format!(
                "grid {dims:?} needs {n} points, got {}",
                points.len()
            )));
        }
        if let Some(idx) = points.iter().position(|p| !vec3::is_finite(*p)) {
            return Err(MeshError::NonFinite(format!("grid point {idx} is not finite")));
        }
        Ok(StructuredGrid { dim, dims, points })
    }

    /// Builds a grid by evaluating `f` at each lattice index.
    pub fn from_fn(
        dim: Dim,
        dims: [usize; 3],
        mut f: impl FnMut(usize, usize, usize) -> PhysPoint,
    ) -> Result<Self> {
        check_dims(dim, dims)?;
        let mut points = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    points.push(f(i, j, k));
                }
            }
        }
        Self::new(dim, dims, points)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn points(&self) -> &[PhysPoint] {
        &self.points
    }

    pub fn num_cells(&self) -> usize {
        let [ni, nj, nk] = self.dims;
        match self.dim {
            Dim::Two => (ni - 1) * (nj - 1),
            Dim::Three => (ni - 1) * (nj - 1) * (nk - 1),
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> PhysPoint {
        self.points[self.index(i, j, k)]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, k: usize, p: PhysPoint) {
        let idx = self.index(i, j, k);
        self.points[idx] = p;
    }

    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        let [ni, nj, nk] = self.dims;
        let edge = i == 0 || i == ni - 1 || j == 0 || j == nj - 1;
        match self.dim {
            Dim::Two => edge,
            Dim::Three => edge || k == 0 || k == nk - 1,
        }
    }

    /// Applies `f` to every point.
    pub fn map_points(&self, f: impl Fn(PhysPoint) -> PhysPoint) -> Result<Self> {
        Self::new(self.dim, self.dims, self.points.iter().map(|&p| f(p)).collect())
    }

    /// Uniform parameter of lattice index `i` along an axis of `n` nodes.
    #[inline]
    pub fn param(i: usize, n: usize) -> f64 {
        i as f64 / (n - 1) as f64
    }
}

/// Validates lattice dimensions for a given geometric dimension.
pub fn check_dims(dim: Dim, dims: [usize; 3]) -> Result<()> {
    let ok = match dim {
        Dim::Two => dims[0] >= 2 && dims[1] >= 2 && dims[2] == 1,
        Dim::Three => dims.iter().all(|&n| n >= 2),
    };
    if ok {
        Ok(())
    } else {
        Err(MeshError::DimensionMismatch(format!(
            "lattice {dims:?} is invalid for a {}D grid",
            dim.n()
        )))
    }
}
