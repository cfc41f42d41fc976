use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] logspline_core::Error),

    #[error("invalid configuration: `{key}` {reason}")]
    Config { key: &'static str, reason: String },

    #[error("cell n={n} replication={replication} gamma={gamma} failed: {source}")]
    Cell {
        n: usize,
        replication: usize,
        gamma: f64,
        #[source]
        source: logspline_core::Error,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn config_error(key: &'static str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        key,
        reason: reason.into(),
    }
}
