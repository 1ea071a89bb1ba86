//! Residual dense network engine for single-image super-resolution.
//!
//! The crate is `no_std` (it needs `alloc`). It carries the dense tensor type,
//! a tape-based reverse-mode differentiator, the network graph, the Adam
//! training loop, bicubic degradation, patch batching and PSNR/SSIM metrics.
//! File formats, image decoding and the command line live in the `rdn` crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod param;
pub mod model;
pub mod optim;
pub mod real;
pub mod resample;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use param::{ParamId, ParamSet, Parameter};
pub use real::Real;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Shape, Tensor4};
pub use data::{extract_patches, make_batches, ImagePair, Patch};
pub use metrics::{psnr, ssim, MetricOptions, MetricReport, MetricRow};
pub use model::{Ablation, ModelConfig, Rdn};
pub use optim::{lr_at, Adam, TrainConfig};
pub use resample::bicubic_downsample;
pub use train::{EpochStats, Trainer};
