use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value space mismatch: expected {expected}, found {found}")]
    ValueSpace { expected: &'static str, found: &'static str },
    #[error("value {value} outside the permitted range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl core::fmt::Debug, found: impl core::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        expected: alloc::format!("{expected:?}"),
        found: alloc::format!("{found:?}"),
    }
}
