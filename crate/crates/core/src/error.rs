//! Error type shared by every solver in the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LfdError>;

/// Failure modes of the solvers and diagnostics.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum LfdError {
    /// A grid was constructed with an invalid range or point count.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A vector did not have the length of the grid it was paired with.
    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Two objects that must share a grid do not.
    #[error("grid mismatch between {0}")]
    GridMismatch(String),

    /// A density has zero or non-finite mass, or negative entries.
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A point was requested outside the grid range.
    #[error("point {x} lies outside the grid [{x_min}, {x_max}]")]
    OutOfDomain { x: f64, x_min: f64, x_max: f64 },

    /// The uncertainty classes intersect, so no test can separate them.
    #[error("uncertainty classes overlap: {0}")]
    ClassOverlap(String),

    /// The constraint set admits no density pair.
    #[error("infeasible constraint set: {message}")]
    Infeasible {
        message: String,
        /// Indices of the constraints that were most strongly binding when
        /// feasibility search stopped.
        active_constraints: Vec<usize>,
    },

    /// An iterative method failed to reach its tolerance.
    #[error("no convergence in {method}: {message}")]
    Convergence {
        method: String,
        message: String,
        /// Last iterate or residual vector, for diagnostics.
        last_iterate: Vec<f64>,
    },
}

impl LfdError {
    pub(crate) fn infeasible(message: impl Into<String>) -> Self {
        LfdError::Infeasible {
            message: message.into(),
            active_constraints: Vec::new(),
        }
    }

    pub(crate) fn convergence(
        method: impl Into<String>,
        message: impl Into<String>,
        last_iterate: Vec<f64>,
    ) -> Self {
        LfdError::Convergence {
            method: method.into(),
            message: message.into(),
            last_iterate,
        }
    }
}
