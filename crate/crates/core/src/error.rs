use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the meshing toolkit.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("unknown geometry `{0}`")]
    UnknownGeometry(String),

    #[error("invalid geometry parameter: {0}")]
    InvalidParam(String),

    #[error("face count mismatch: dimension {dim} needs {expected} faces, got {found}")]
    FaceCountMismatch {
        dim: usize,
        expected: usize,
        found: usize,
    },

    #[error(
        "inconsistent boundary: faces {face_a} and {face_b} disagree by {discrepancy:e} at parameter {at:?}"
    )]
    InconsistentBoundary {
        face_a: String,
        face_b: String,
        discrepancy: f64,
        at: [f64; 3],
    },

    #[error("parameter point {0:?} is not on the boundary of the parametric domain")]
    NotOnBoundary([f64; 3]),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("stencil exits the parametric domain at center {center:?} with steps {steps:?}")]
    StencilOutOfDomain { center: [f64; 3], steps: [f64; 3] },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid network layout: {0}")]
    InvalidLayout(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate cell {cell:?}: {reason}")]
    DegenerateCell { cell: [usize; 3], reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MeshError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MeshError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        MeshError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by NaN/Inf during a numerical computation.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MeshError::NonFinite(_))
    }

    /// True for file-system failures.
    pub fn is_io(&self) -> bool {
        matches!(self, MeshError::Io { .. })
    }
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;
