use thiserror::Error;

/// Crate-wide error type. Numerical routines reserve `InvalidArgument` for
/// caller mistakes (bad dimensions, non-finite inputs, empty ranges); data
/// that is merely unusable at a pixel (warp behind camera, out of bounds)
/// is reported through validity masks instead.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for the common validation failure.
pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
