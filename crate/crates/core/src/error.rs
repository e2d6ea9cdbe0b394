use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable short tag used by the CLI error line and the C error codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Toml(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Infeasible(_) => "infeasible",
            Error::NonFinite(_) => "non_finite",
            Error::Dataset(_) => "dataset",
            Error::Format { .. } | Error::Json(_) => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
