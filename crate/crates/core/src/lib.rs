//! Core numerics for differentiable shape optimization: regular-grid
//! fields, the component contract, round-cone geometry, surface meshing,
//! the analytic flow oracle and a box-constrained MMA optimizer.

pub mod diff;
pub mod dsf;
pub mod error;
pub mod field;
pub mod format;
pub mod geometry;
pub mod mesh;
pub mod mma;
pub mod oracle;
pub mod stages;
pub mod vtk;

pub use diff::{chain, check_vjp, Chain, DiffComponent, GradCheckOptions, GradCheckReport, Port};
pub use error::{Error, Result};
pub use field::{GridSpec, ScalarField3, VectorField3};
pub use geometry::DesignParams;
