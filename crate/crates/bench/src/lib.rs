//! Shared fixtures for the criterion benchmarks.

use std::collections::BTreeMap;

use meshforge_core::{builtin_geometry, mlp_init, BoundarySpec, Network};

pub fn shell() -> BoundarySpec {
    builtin_geometry("semi_cylindrical_shell", &BTreeMap::new()).expect("built-in geometry")
}

pub fn annulus() -> BoundarySpec {
    builtin_geometry("annulus_quarter", &BTreeMap::new()).expect("built-in geometry")
}

/// Untrained network of the 3D benchmark shape. Inference cost does not
/// depend on the weights.
pub fn shell_network() -> Network {
    mlp_init(&[3, 64, 64, 64, 3], 0).expect("valid layer sizes")
}
