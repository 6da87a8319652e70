use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("empty reference set: {0}")]
    EmptyStore(String),

    #[error("label mode error: {0}")]
    Mode(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel smoother has no pairs for model {0}")]
    NotFitted(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RouterError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RouterError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        RouterError::NotFound {
            kind,
            id: id.into(),
        }
    }

    /// Short machine-readable tag, used by the service's error bodies.
    pub fn reason(&self) -> &'static str {
        match self {
            RouterError::Schema { .. } => "schema_error",
            RouterError::Validation(_) => "validation_error",
            RouterError::DimensionMismatch { .. } => "dimension_mismatch",
            RouterError::NotFound { .. } => "not_found",
            RouterError::EmptyStore(_) => "empty_store",
            RouterError::Mode(_) => "mode_error",
            RouterError::Domain(_) => "domain_error",
            RouterError::NotFitted(_) => "not_fitted",
            RouterError::Invariant(_) => "invariant_error",
            RouterError::UndefinedCorrelation(_) => "undefined_correlation",
            RouterError::Io { .. } => "io_error",
            RouterError::Csv(_) => "csv_error",
            RouterError::Json(_) => "json_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, RouterError>;
