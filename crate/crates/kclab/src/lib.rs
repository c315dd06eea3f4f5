//! Numerical laboratory for the KdV equation with a piecewise-constant
//! dispersion coefficient: interface-aware solvers, Carleman weights and
//! their numerical audit, weighted HUM controls and potential recovery.

pub mod artifacts;
pub mod carleman_lab;
pub mod control;
pub mod domain;
pub mod error;
pub mod inverse;
pub mod kdv_solver;
pub mod linalg;
pub mod weights;

pub use domain::{build_domain, build_grid, Grid, ObservationSet, PiecewiseDomain};
pub use error::{Error, Result};
pub use kdv_solver::field::Field;
pub use weights::{CarlemanWeights, WeightMode};
