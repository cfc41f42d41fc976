use std::path::PathBuf;

use logspline_harness::HarnessError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write `{path}`: {reason}")]
    Write { path: PathBuf, reason: String },

    #[error("malformed config `{path}`: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: `{key}` {reason}")]
    Config { key: String, reason: String },

    #[error("cannot parse `{path}` line {line}: {reason}")]
    Data {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Harness(#[from] HarnessError),

    #[error(transparent)]
    Core(#[from] logspline_core::Error),

    #[error("{failed} of {total} property checks failed")]
    PropertyFailure { failed: usize, total: usize },
}

impl CliError {
    /// 2 for failed property checks, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::PropertyFailure { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn config_error(key: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}
