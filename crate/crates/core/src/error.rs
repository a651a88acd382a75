use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error in {term}: {detail}")]
    Domain { term: &'static str, detail: String },

    #[error("{term} evaluated to a non-finite value ({value})")]
    NonFinite { term: &'static str, value: f64 },

    #[error("index error: {0}")]
    Index(String),

    #[error("integration blew up at step {step} (t = {t}): state {state:?}")]
    Blowup { step: usize, t: f64, state: [f64; 4] },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid model parameters: {0}")]
    Validation(String),

    #[error("degenerate grid at step {step}: {detail}")]
    DegenerateGrid { step: usize, detail: String },

    #[error("lost codeword weight {lost:e} exceeds the tolerance {tolerance:e}")]
    LostWeight { lost: f64, tolerance: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(term: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { term, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
