use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// The requested bound or estimator does not apply to this regime.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("degenerate kernel: all Nadaraya-Watson weights underflowed")]
    DegenerateKernel,

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn not_applicable(msg: impl Into<String>) -> Error {
    Error::NotApplicable(msg.into())
}
