//! Error type shared across the solver library.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Error {
    /// Two fields (or a field and a grid) do not live on the same mesh.
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// An invalid parameter value, with the offending name in the message.
    Param(String),
    /// A non-finite coefficient appeared during system assembly.
    NonFinite { what: &'static str, i: usize, j: usize },
    /// The linear solver did not reach the requested residual.
    Solve {
        message: String,
        residual: f64,
        iterations: usize,
    },
    /// A geometric measurement (contour extraction, circle fit) failed.
    Measurement(String),
    /// Two grids that must coincide cell-by-cell do not line up.
    Alignment(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::GridMismatch { expected, got } => write!(
                f,
                "grid mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::Param(msg) => write!(f, "invalid parameter: {msg}"),
            Error::NonFinite { what, i, j } => {
                write!(f, "non-finite {what} at cell ({i}, {j})")
            }
            Error::Solve {
                message,
                residual,
                iterations,
            } => write!(
                f,
                "linear solve failed after {iterations} iterations (residual {residual:.3e}): {message}"
            ),
            Error::Measurement(msg) => write!(f, "measurement failed: {msg}"),
            Error::Alignment(msg) => write!(f, "grid alignment error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
