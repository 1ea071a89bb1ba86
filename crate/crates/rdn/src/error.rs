//! Run-level errors and their process exit codes.

use std::path::PathBuf;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::image_io::ImageError;
use crate::manifest::ManifestError;

/// Exit status for success.
pub const EXIT_OK: u8 = 0;
/// Exit status for numerical or assertion failures and runtime IO failures.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] rdn_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl RunError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RunError {
        let path = path.into();
        move |source| RunError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Manifest(_) | RunError::Usage(_) => EXIT_USAGE,
            RunError::Checkpoint(CheckpointError::Io { .. }) => EXIT_FAILURE,
            RunError::Checkpoint(_) => EXIT_USAGE,
            RunError::Core(rdn_core::Error::NonFinite { .. }) => EXIT_FAILURE,
            RunError::Core(_) => EXIT_USAGE,
            RunError::Image(_) | RunError::Io { .. } | RunError::Failed(_) => EXIT_FAILURE,
        }
    }
}
