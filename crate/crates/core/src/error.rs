use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read or write {path}: {source}")]
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

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("similarity {0} is not positive, no distance is defined")]
    NoDistance(f64),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("bandwidth matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("sample points are all coincident")]
    DegenerateSample,

    #[error("polynomial design matrix is rank deficient along {direction}")]
    RankDeficient { direction: String },

    #[error("unknown user '{0}'")]
    UnknownUser(String),

    #[error("unknown item '{0}'")]
    UnknownItem(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
