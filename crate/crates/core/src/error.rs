use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solvers, the t-SNE model and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "majorization condition unreachable at iteration {iteration}: \
         {backtracks} backtracks, mu = {mu:e}, gap = {gap:e}"
    )]
    MajorizationUnreachable {
        iteration: usize,
        backtracks: usize,
        mu: f64,
        gap: f64,
    },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        what: &'static str,
    },

    #[error("composite subgradient entry {index} is positive ({value:e})")]
    PositiveSubgradient { index: usize, value: f64 },

    #[error(
        "sufficient descent violated at iteration {iteration}: \
         decrease {decrease:e} < required {required:e}"
    )]
    DescentViolation {
        iteration: usize,
        decrease: f64,
        required: f64,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
