use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solvers and their file interfaces.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("index {index} out of range for grid with {n} intervals")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("division rate violates 0 < B_m <= B <= B_M: {0}")]
    InadmissibleRate(String),

    #[error(
        "{solver} did not converge within {iterations} iterations (last change {last_change:.3e})"
    )]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("scheme failure: {0}")]
    SchemeFailure(String),

    #[error("filter violated: {0}")]
    FilterViolation(String),

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("empty report")]
    EmptyReport,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
