//! Discrete KdV operators and solvers on interface-aligned grids.

pub mod diagnostics;
pub mod field;
pub mod manufactured;
pub mod operator;
pub mod sbp;
pub mod solve;

pub use diagnostics::{energy_report, kato_multiplier, tc_residual, EnergyKind, EnergyReport};
pub use field::{Field, FieldSidecar, PiecewiseCalculus, Trace};
pub use manufactured::{manufactured_error, observed_order, Manufactured};
pub use operator::{assemble_operator, BoundarySide, Coefficient, DiscreteOperator, Drift};
pub use solve::{
    solve_adjoint, solve_adjoint_with, solve_linear, solve_linear_with, solve_nonlinear, solve_nonlinear_with,
    AdjointSolution, NonlinearSolution, Source, Stepper,
};
