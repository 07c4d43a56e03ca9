//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::sinkhorn::SinkhornState;

/// Errors raised by measure construction, transport solvers, energies and the optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("every density entry is zero")]
    AllZero,

    #[error("negative mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("gaussian rasterization is degenerate: no cell has positive density")]
    DegenerateRaster,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("exact solver handles at most {limit} support points, got {size}")]
    TooLarge { size: usize, limit: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        state: Option<Box<SinkhornState>>,
    },

    #[error("eps = {eps:e} is too small: potentials became non-finite")]
    EpsTooSmall { eps: f64 },

    #[error("state has not converged")]
    NotConverged,

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),

    #[error("backend mismatch: {0}")]
    BackendMismatch(String),

    #[error("frame {index} violates its interpolation constraint")]
    ConstraintViolated { index: usize },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("no progress: backtracking hit the step floor at outer iteration {iteration}")]
    NoProgress { iteration: usize },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
