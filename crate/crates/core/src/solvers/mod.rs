//! Dense LP, QP, mixed-binary and bilinear solvers.

pub mod bilinear;
pub mod dump;
pub mod lp;
pub mod mip;
pub mod problem;
pub mod qp;
pub mod tol;

pub use bilinear::{project_simplex, solve_bilinear_alternating, BilinearOptions, BilinearProblem, BilinearResult, BilinearStatus};
pub use lp::solve_lp;
pub use mip::{solve_mip, MipOptions, MipProblem, MipSolution, MipStatus};
pub use problem::{Problem, Solution, Status};
pub use qp::{solve_qp, QpSolution};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SolverError {
    #[error("inconsistent problem dimensions")]
    Dimension,
    #[error("hessian is not symmetric")]
    NotSymmetric,
    #[error("problem data contains non-finite values")]
    NonFinite,
    #[error("linear solver called with a quadratic objective")]
    NotLinear,
    #[error("quadratic solver called without a hessian")]
    NotQuadratic,
    #[error("hessian is not positive semidefinite")]
    NotConvex,
}
