use std::path::PathBuf;

use biasbench_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("malformed JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 0 success, 1 output failure, 2 usage or config error, 3 guard
    /// refusal, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Usage(_) | HarnessError::Read { .. } | HarnessError::Json { .. } => 2,
            HarnessError::Core(CoreError::InvalidInput(_)) => 2,
            HarnessError::Core(CoreError::Refused(_)) => 3,
            HarnessError::Core(
                CoreError::NumericalFailure(_) | CoreError::Diverged { .. } | CoreError::InfiniteLoss,
            ) => 4,
            HarnessError::Write { .. } | HarnessError::Csv(_) => 1,
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> HarnessError {
    HarnessError::Usage(msg.into())
}
