//! Taylor–Hood finite element machinery for the stationary Navier–Stokes
//! equations in two dimensions, posed in Muckenhoupt-weighted Sobolev spaces
//! so that singular right-hand sides (point forces, measures on curves) are
//! admissible.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] – convex polygons, uniform/graded triangulations, refinement,
//!   point location and the `tri-mesh v1` text format.
//! * [`weights`] – constant and radial power weights, their A₂ / A₁ / A₂(Ω)
//!   classification and a dyadic scan of the A₂ constant.
//! * [`quadrature`] – triangle rules, Gauss–Legendre/Jacobi nodes and
//!   singular-vertex rules for `|x − z|^α` integrands.
//! * [`femspace`] – the P2/P1 space, fields, interpolation and weighted norms.
//! * [`assembly`] – Stokes saddle matrices, convection and forcing functionals.
//! * [`solver`] – saddle solves, the Picard driver and the estimators for the
//!   constants entering the smallness condition.
//! * [`study`] – manufactured solutions and convergence studies.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose; index
// loops mirror the local element matrices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod femspace;
pub mod geometry;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod study;
pub mod weights;

pub use assembly::{
    assemble_convection, assemble_forcing, assemble_stokes, AnalyticBuiltin, ForcingSpec,
    SaddleSystem,
};
pub use femspace::{FEField, PointValue, TaylorHoodSpace};
pub use geometry::Point;
pub use mesh::{GradingSpec, Polygon, TriMesh};
pub use solver::{ConstantsReport, PicardTrace, SolveOptions};
pub use study::{ConvergenceReport, ManufacturedCase};
pub use weights::{Weight, WeightClassReport};
