use thiserror::Error;

/// Errors raised by the library. Each variant names the kind of contract that was broken.
#[derive(Debug, Error)]
pub enum NckError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("non-finite value at tau={tau}: {what}")]
    NonFinite { tau: f64, what: String },
    #[error("flag audit failed for `{name}`: {msg}")]
    Audit { name: String, msg: String },
    #[error("root finding failed: {0}")]
    Root(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, NckError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(NckError::Domain(msg.into()))
}
