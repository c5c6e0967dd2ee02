//! Structured mesh generation: transfinite interpolation, Winslow elliptic
//! smoothing, and a physics-informed neural mesher trained on a
//! finite-difference Winslow residual.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checkpoint;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod network;
pub mod quality;
pub mod stencil;
pub mod tfi;
pub mod trainer;
pub mod vec3;

#[cfg(test)]
mod properties;

pub use bench::{run_bench, BenchMethod, BenchRecord};
pub use checkpoint::Checkpoint;
pub use elliptic::{elliptic_smooth, residual_norm, winslow_coefficients, SmoothOptions, SmoothResult, WinslowCoeffs};
pub use error::{MeshError, Result};
pub use geometry::{
    builtin_geometry, eval_boundary, load_boundary_spec, sample_training_batch, BoundarySpec, Dim, FaceId,
    ParamPoint, PhysPoint, TrainingBatch,
};
pub use grid::StructuredGrid;
pub use io::{export_plot3d, export_vtk, read_plot3d, read_vtk};
pub use network::{mlp_init, AdamState, Network, ParamGradient};
pub use quality::{quality_report, QualityReport};
pub use stencil::{build_stencil, fd_derivatives, DerivativeBundle, StencilBatch, StencilConfig};
pub use tfi::tfi_generate;
pub use trainer::{generate_mesh, test_set_loss, train, TrainConfig, TrainedModel, UncertaintyParams};
