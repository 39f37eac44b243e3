//! Adaptive regularized Newton minimization with negative-curvature steps.
//!
//! The outer method ([`solver::solve`]) regularizes the Newton system with a
//! multiple of the current gradient norm and falls back to scaled
//! negative-curvature directions when the Hessian is too indefinite. Trial
//! steps come from one of two backends: [`stepcomp::exact`] (dense
//! eigen-decomposition and Cholesky) or [`stepcomp::krylov`] (matrix-free
//! Lanczos). [`second_order::solve_so`] adds minimum-eigenvector steps so that
//! the final iterate is also approximately second-order critical.
//!
//! [`problem`] and [`suite`] provide the objective interface and a bundled set
//! of analytic test functions; [`bench`] runs solver/problem matrices and
//! computes performance profiles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bench;
pub mod config;
pub mod error;
pub mod linalg;
pub mod problem;
pub mod second_order;
pub mod solver;
pub mod stepcomp;
pub mod suite;

pub use config::{Backend, SOConfig, Sigma0, SolverConfig};
pub use error::{Error, Result};
pub use problem::{Objective, Problem, ProblemMetadata};
pub use second_order::solve_so;
pub use solver::{solve, IterationRecord, SolveResult, SolveStatus};
pub use stepcomp::{Preconditioner, StepKind, StepOutcome};
