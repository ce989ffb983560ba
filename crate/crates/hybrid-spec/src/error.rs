use std::io;
use std::path::{Path, PathBuf};

use hybrid_spec_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("invalid configuration keys: {}", .0.join(", "))]
    Validation(Vec<String>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {msg}", .path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: unsupported database version {found} (expected {expected})", .path.display())]
    Version { path: PathBuf, found: u64, expected: u64 },
    #[error("skip calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        AppError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, msg: impl ToString) -> Self {
        AppError::Parse { path: path.as_ref().to_path_buf(), line, msg: msg.to_string() }
    }

    /// 1 validation, 2 I/O and file formats, 3 calibration failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) | AppError::Config(_) => 1,
            AppError::Io { .. } | AppError::Parse { .. } | AppError::Version { .. } => 2,
            AppError::Calibration(_) => 3,
            AppError::Core(e) => match e {
                CoreError::CalibrationFailed(_) => 3,
                CoreError::Schema(_) => 2,
                _ => 1,
            },
        }
    }
}
