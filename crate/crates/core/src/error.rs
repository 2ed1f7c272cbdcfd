use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyCloud,

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("degenerate correspondences: {0}")]
    DegenerateCorrespondences(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid cloud: {0}")]
    InvalidCloud(String),

    #[error("sampling produced an empty cloud")]
    EmptyResult,

    #[error("insufficient density: {0}")]
    InsufficientDensity(String),

    #[error("no correspondences")]
    NoCorrespondences,

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("non-finite value at level {level}, iteration {iteration}: {what}")]
    Numerical {
        level: usize,
        iteration: usize,
        what: String,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("no evaluable landmarks")]
    EmptyLandmarks,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("benchmark harness: {0}")]
    Harness(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numerical(level: usize, iteration: usize, what: impl Into<String>) -> Self {
        Error::Numerical {
            level,
            iteration,
            what: what.into(),
        }
    }
}
