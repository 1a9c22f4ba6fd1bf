//! Second-order cone programming: problem description, multipliers, and a
//! dense interior-point solver.

pub mod cone;
mod ipm;
mod problem;

pub use ipm::{
    ipm_solve, ConicSolution, ConicSolver, InteriorPoint, IpmSettings, IterateRecord, SolveStatus,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
pub use problem::{dual_residuals, ConicProblem, DualResidualReport, DualSolution, SocConstraint};
