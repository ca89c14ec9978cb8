use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(
        "linear system is numerically singular (n = {n}, smallest diagonal {min_diag:e}, \
         largest diagonal {max_diag:e}, jitter tried up to {jitter:e})"
    )]
    Singular {
        n: usize,
        min_diag: f64,
        max_diag: f64,
        jitter: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("every grid point failed numerically for {0}")]
    NoValidGridPoint(String),

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input
    /// or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NonFinite(_)
                | Error::Quadrature(_)
                | Error::DegenerateSignal(_)
                | Error::NoValidGridPoint(_)
        )
    }
}
