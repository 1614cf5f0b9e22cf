//! Numerical laboratory for planar hyperbolic diffeomorphisms near a fixed point.
//!
//! The crate builds linearizing conjugacies by limit constructions, computes
//! invariant manifolds and flattening transforms, solves the axis functional
//! equations by contraction, extends jets off the coordinate cross, and
//! estimates empirical Hölder exponents of the resulting derivative fields.

pub mod conjugacy;
pub mod funceq;
pub mod grid;
pub mod holder;
mod linalg;
pub mod manifolds;
pub mod maps;
pub mod quadrature;
pub mod spectral;
pub mod whitney;

pub use grid::{AxisFunction, AxisGrid, Field2D, Grid2D, MatrixField2D, ScalarField2D, VectorField2D};
pub use linalg::{diag, inverse, norm, op_norm, pt, Mat2, Point};
pub use maps::{BumpProfile, MapError, MapRef, PlanarMap};
pub use spectral::{DerivedExponents, DomainKind, SpectralParams};
