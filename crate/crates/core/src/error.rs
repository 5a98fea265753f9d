use thiserror::Error;

/// Errors produced by fitting, resampling and interval construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MalpError {
    #[error("predictor covariance matrix is singular or not positive definite")]
    SingularCovariance,
    #[error("too few rows: need at least {required}, got {actual}")]
    TooFewRows { required: usize, actual: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero variance: correlation is undefined")]
    ZeroVariance,
    #[error("degenerate input: both vectors are constant")]
    DegenerateInput,
    #[error("degenerate agreement: multiple correlation {gamma:e} is outside the admissible range")]
    DegenerateAgreement { gamma: f64 },
    #[error("non-finite value in input at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("numerical gradient is not finite")]
    NumericalGradientFailure,
    #[error("{failed} of {total} resamples failed (more than 1%)")]
    ExcessiveResampleFailure { failed: usize, total: usize },
    #[error("BCa interval is degenerate: {0}")]
    BcaDegenerate(&'static str),
    #[error("too many predictors for exhaustive search: {p} > {max}")]
    TooManyPredictors { p: usize, max: usize },
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },
    #[error("file not found: {path}")]
    FileNotFound { path: String },
    #[error("cannot parse row {row}, column `{column}`: {message}")]
    ParseError { row: usize, column: String, message: String },
    #[error("column not found: {name}")]
    ColumnNotFound { name: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl MalpError {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        MalpError::InvalidArgument {
            field,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            MalpError::SingularCovariance => "SingularCovariance",
            MalpError::TooFewRows { .. } => "TooFewRows",
            MalpError::DimensionMismatch { .. } => "DimensionMismatch",
            MalpError::ZeroVariance => "ZeroVariance",
            MalpError::DegenerateInput => "DegenerateInput",
            MalpError::DegenerateAgreement { .. } => "DegenerateAgreement",
            MalpError::NonFinite { .. } => "NonFinite",
            MalpError::NumericalGradientFailure => "NumericalGradientFailure",
            MalpError::ExcessiveResampleFailure { .. } => "ExcessiveResampleFailure",
            MalpError::BcaDegenerate(_) => "BCaDegenerate",
            MalpError::TooManyPredictors { .. } => "TooManyPredictors",
            MalpError::InvalidArgument { .. } => "InvalidArgument",
            MalpError::FileNotFound { .. } => "FileNotFound",
            MalpError::ParseError { .. } => "ParseError",
            MalpError::ColumnNotFound { .. } => "ColumnNotFound",
            MalpError::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, MalpError>;
