use std::path::PathBuf;

use thiserror::Error;

use crate::control::ScanLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
    Divergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}:{column}: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{file}: {message}")]
    InvalidData { file: PathBuf, message: String },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unknown scenario tag `{0}`")]
    UnknownScenario(String),

    #[error("unknown phantom preset `{0}`")]
    UnknownPhantom(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("factorization of the regularized kernel system failed (condition estimate {condition:.3e}); try raising lambda")]
    Factorization { condition: f64 },

    #[error("zero-variance image: {0}")]
    ZeroVariance(&'static str),

    #[error("progress ranges do not overlap")]
    DisjointProfiles,

    #[error("{0}")]
    Evaluation(String),

    #[error("non-finite controller input: {0}")]
    NonFinite(&'static str),

    #[error("no contact with the phantom after {0:.2} s of approach")]
    NoContact(f64),

    #[error("controller diverged at t = {time:.4} s (|x_e| = {error_norm:.3} m)")]
    Diverged {
        time: f64,
        error_norm: f64,
        log: Box<ScanLog>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::UnknownScenario(_) | Error::UnknownPhantom(_) => {
                ErrorKind::Usage
            }
            Error::Io { .. }
            | Error::Malformed { .. }
            | Error::InvalidData { .. }
            | Error::Json { .. }
            | Error::DimensionMismatch { .. }
            | Error::Evaluation(_)
            | Error::DisjointProfiles => ErrorKind::Data,
            Error::DegenerateData(_)
            | Error::NotPositiveDefinite(_)
            | Error::Factorization { .. }
            | Error::ZeroVariance(_)
            | Error::NonFinite(_) => ErrorKind::Numeric,
            Error::NoContact(_) | Error::Diverged { .. } => ErrorKind::Divergence,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
