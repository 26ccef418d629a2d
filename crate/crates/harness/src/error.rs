use std::path::PathBuf;

use drm_core::DrmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] DrmError),
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("cannot parse config: {0}")]
    ConfigSyntax(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    ConfigWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err(key: &str, reason: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
