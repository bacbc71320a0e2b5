use std::path::PathBuf;

/// Errors raised by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum AuditError {
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

    #[error("schema error: {0}")]
    Schema(String),

    #[error("non-binary label {value:?} in row {row}")]
    NonBinaryLabel { row: usize, value: String },

    #[error("non-numeric value {value:?} in row {row}, column {column:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value in row {row}, column {column:?} (imputation disabled)")]
    MissingValue { row: usize, column: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("single-class data: {0}")]
    SingleClass(String),

    #[error("model is not trained")]
    Untrained,

    #[error("{0}")]
    Unsupported(String),

    #[error("too many features for exact enumeration: d = {d} > {max}; use permutation_importance instead")]
    TooManyFeatures { d: usize, max: usize },

    #[error("divergence in {context} at step {step}")]
    Divergence { context: String, step: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no client updates to aggregate")]
    EmptyAggregation,

    #[error("group {group}: {source}")]
    Group {
        group: u32,
        #[source]
        source: Box<AuditError>,
    },
}

impl AuditError {
    /// Numeric failures (divergence, degenerate fits) as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            AuditError::Divergence { .. } | AuditError::Degenerate(_) => true,
            AuditError::Group { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AuditError::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;
