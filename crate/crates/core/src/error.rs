use thiserror::Error;

pub type Result<T> = std::result::Result<T, IcrfError>;

/// Every failure surfaced by the library. [`IcrfError::code`] gives a stable
/// machine-readable identifier for each variant.
#[derive(Debug, Error)]
pub enum IcrfError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("interval ({left}, {right}] carries no mass under the covariate curve")]
    DegenerateInterval { left: f64, right: f64 },
    #[error("inter-quartile constant is not positive (c = {0})")]
    DegenerateQuantiles(f64),
    #[error("empty group")]
    EmptyGroup,
    #[error("no subjects at risk with events before tau")]
    ZeroRisk,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: expected {expected} covariates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid fold {fold} (model has {n_fold})")]
    InvalidFold { fold: usize, n_fold: usize },
    #[error("out-of-bag set is empty")]
    EmptyOob,
    #[error("every subject has an empty known-status region")]
    AllSkipped,
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("truth sidecar required for oracle metrics")]
    MissingTruth,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl IcrfError {
    pub fn code(&self) -> &'static str {
        match self {
            IcrfError::EmptyInput => "EMPTY_INPUT",
            IcrfError::InvalidCurve(_) => "INVALID_CURVE",
            IcrfError::DegenerateInterval { .. } => "DEGENERATE_INTERVAL",
            IcrfError::DegenerateQuantiles(_) => "DEGENERATE_QUANTILES",
            IcrfError::EmptyGroup => "EMPTY_GROUP",
            IcrfError::ZeroRisk => "ZERO_RISK",
            IcrfError::InsufficientData(_) => "INSUFFICIENT_DATA",
            IcrfError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            IcrfError::InvalidFold { .. } => "INVALID_FOLD",
            IcrfError::EmptyOob => "EMPTY_OOB",
            IcrfError::AllSkipped => "ALL_SKIPPED",
            IcrfError::Parse { .. } => "PARSE_ERROR",
            IcrfError::InvariantViolation(_) => "INVARIANT_VIOLATION",
            IcrfError::MissingTruth => "MISSING_TRUTH",
            IcrfError::Config(_) => "CONFIG_ERROR",
            IcrfError::Io(_) => "IO_ERROR",
            IcrfError::Serde(_) => "SERDE_ERROR",
        }
    }
}

impl From<csv::Error> for IcrfError {
    fn from(e: csv::Error) -> Self {
        IcrfError::Serde(e.to_string())
    }
}

impl From<serde_json::Error> for IcrfError {
    fn from(e: serde_json::Error) -> Self {
        IcrfError::Serde(e.to_string())
    }
}
