use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("invalid mode: {0}")]
    InvalidMode(String),

    #[error("no progress: {0}")]
    ProgressFailure(String),

    #[error("coverage failure: found {found} of {wanted} distinct directions")]
    CoverageFailure { found: usize, wanted: usize },

    #[error("matrix is singular or too ill-conditioned to invert (condition number {condition:.3e})")]
    InversionFailure { condition: f64 },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("search failure: {0}")]
    SearchFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("structure violation: {0}")]
    StructureViolation(String),

    #[error("variance failure: {0}")]
    VarianceFailure(String),

    #[error("precondition failed{}: {detail}", pair.map(|(i, j)| format!(" for pair ({i}, {j})")).unwrap_or_default())]
    PreconditionFailure { pair: Option<(usize, usize)>, detail: String },

    #[error("unknown config key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },

    #[error("config: missing required section `{0}`")]
    MissingSection(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
