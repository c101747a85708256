//! Optimization backend: an interior-point QP solver and the FIE/MHE window
//! problem built on top of it.

pub mod qp;
pub mod window;

pub use qp::{solve_qp, LinearForm, Qp, QpError, QpOptions, QpSolution, QuadForm};
pub use window::{
    build_epigraph_qp, solve_window, EpigraphQp, SolveReport, SolverOptions, WindowError,
    WindowProblem, WindowSolution,
};
