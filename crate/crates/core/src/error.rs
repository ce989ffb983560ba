use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid configuration keys: {}", .0.join(", "))]
    Validation(Vec<String>),
    #[error("insufficient window: need {needed} points, got {got}")]
    InsufficientWindow { needed: usize, got: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("skip calibration failed: {0}")]
    CalibrationFailed(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
