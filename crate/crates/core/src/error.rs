use thiserror::Error;

/// Errors raised anywhere in the fitting, evaluation and ingestion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("rank-deficient design: Gram condition number {condition:.3e} exceeds guard {limit:.1e}")]
    RankDeficient { condition: f64, limit: f64 },

    #[error("singular matrix: condition number {condition:.3e} exceeds guard {limit:.1e} (follow-up items do not reconstruct the baseline)")]
    Singular { condition: f64, limit: f64 },

    #[error("insufficient data: {available} complete cases, need more than {required}")]
    InsufficientData { available: usize, required: usize },

    #[error("unknown time point {0}")]
    UnknownTimePoint(u32),

    #[error("time point {label}: {source}")]
    AtTimePoint {
        label: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("no scoreable item: every observed column is constant")]
    AllColumnsConstant,

    #[error("matrix has an all-zero diagonal; diagonal similarity is undefined")]
    ZeroDiagonal,

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}, column '{column}': {message}")]
    Parse { line: u64, column: String, message: String },

    #[error("baseline value missing at line {line}, column '{column}'")]
    BaselineMissing { line: u64, column: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the linear algebra guards, including ones wrapped
    /// with a time point.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient { .. } | Error::Singular { .. } => true,
            Error::AtTimePoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
