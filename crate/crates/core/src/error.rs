use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("CSV is missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown category `{value}` for attribute `{attribute}` (row {row})")]
    UnknownCategory {
        attribute: String,
        value: String,
        row: usize,
    },
    #[error("value of `{attribute}` out of range at row {row}")]
    OutOfRange { attribute: String, row: usize },
    #[error("parse error at row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("Laplace scale must be finite and positive, got {0}")]
    InvalidScale(f64),
    #[error("exponential mechanism needs at least one score")]
    EmptyScores,
    #[error("sensitivity must be finite and positive, got {0}")]
    InvalidSensitivity(f64),
    #[error("value of `{0}` lies outside the provided metadata")]
    MetadataViolation(String),
    #[error("external generator failed with exit code {code:?}: {stderr}")]
    ExternalProcessFailed { code: Option<i32>, stderr: String },
    #[error("external generator output does not match the schema: {0}")]
    OutputSchemaMismatch(String),
    #[error("sanitiser config references unknown attribute `{0}`")]
    UnknownAttributeInConfig(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("linear system is rank deficient")]
    RankDeficient,
    #[error("reference dataset too small: need {needed} non-target records, have {available}")]
    ReferenceTooSmall { needed: usize, available: usize },
    #[error("insufficient rows for the attack model: need {needed}, have {got}")]
    InsufficientRows { needed: usize, got: usize },
    #[error("at least {needed} game iterations are required, got {got}")]
    InsufficientIterations { needed: usize, got: usize },
    #[error("datasets do not share a schema")]
    SchemaMismatch,
    #[error("config error at `{path}`: {message}")]
    ConfigError { path: String, message: String },
    #[error("I/O error on {path:?}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}
