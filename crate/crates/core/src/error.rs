use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing data: {0}")]
    MissingData(String),

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: expected {expected} features, got {got}")]
    Schema { expected: usize, got: usize },

    #[error("labels contain a single class")]
    DegenerateLabels,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("delay model not accepted: {0}")]
    NotAccepted(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used in the CLI's error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingData(_) => "missing_data",
            Error::DataIntegrity(_) => "data_integrity",
            Error::Parse(_) => "parse",
            Error::Schema { .. } => "schema",
            Error::DegenerateLabels => "degenerate_labels",
            Error::Domain(_) => "domain",
            Error::Undefined(_) => "undefined",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Config(_) => "config",
            Error::NotAccepted(_) => "not_accepted",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
