//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use wns_core::mesh::generate_uniform;
use wns_core::{ForcingSpec, Polygon, TaylorHoodSpace, Weight};

pub const CENTER: [f64; 2] = [0.5, 0.5];

pub fn unit_space(n: usize) -> Arc<TaylorHoodSpace> {
    TaylorHoodSpace::new(generate_uniform(&Polygon::unit_square(), n).expect("uniform mesh"))
}

/// `|x − (½, ½)|^α`.
pub fn centered_weight(alpha: f64) -> Weight {
    Weight::radial(CENTER, alpha).expect("alpha in (-2, 2)")
}

pub fn point_force() -> ForcingSpec {
    ForcingSpec::dirac(CENTER, [1.0, 0.0])
}
