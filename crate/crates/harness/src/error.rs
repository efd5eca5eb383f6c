use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cal_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad corpus file, line {line}: {reason}")]
    Corpus { line: usize, reason: String },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(cal_core::Error::Config(_)) => EXIT_CONFIG,
            HarnessError::Core(cal_core::Error::NonFinite(_))
            | HarnessError::Core(cal_core::Error::DegenerateSample) => EXIT_NUMERICAL,
            _ => EXIT_FAILURE,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}
