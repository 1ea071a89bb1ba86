//! File formats, image IO and the command-line front end for [`rdn_core`].
//!
//! * [`config`]: `key = value` run configuration with `--set` overrides
//! * [`checkpoint`]: binary checkpoint format with resumable optimizer and RNG state
//! * [`image_io`]: 8-bit PNG load and save
//! * [`manifest`]: dataset manifests
//! * [`report`]: metric, loss and ablation CSVs and text tables
//! * [`session`]: training and evaluation runs over files
//! * [`cli`]: the `rdn` command

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod image_io;
pub mod manifest;
pub mod report;
pub mod session;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use error::RunError;
pub use manifest::Manifest;
