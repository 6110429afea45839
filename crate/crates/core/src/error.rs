use std::path::PathBuf;

use thiserror::Error;

use crate::solver::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear predictor {eta} exceeds the exponent guard (|eta| > 700)")]
    Overflow { eta: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("all component densities underflow for observation {row}")]
    Underflow { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("quadrature did not converge (achieved error estimate {achieved:e})")]
    Quadrature { achieved: f64 },

    #[error("fit aborted at EM iteration {iteration}: {source}")]
    FitAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
        trace: Vec<IterationRecord>,
    },

    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
