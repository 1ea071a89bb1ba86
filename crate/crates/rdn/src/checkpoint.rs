//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "URDN"  u32 version
//! u32 len, UTF-8 `key = value` block (model and training settings)
//! u32 count, then per tensor:
//!     u32 len, UTF-8 name, 4 x u32 shape, f32 value[], f32 m[], f32 v[]
//! u64 epoch, u64 step
//! shuffle stream: [u8; 32] seed, u64 stream, u128 word position
//! ```

use std::path::Path;

use rdn_core::model::LayoutMismatch;
use rdn_core::rng::{self, Rng, RngState};
use rdn_core::{ModelConfig, ParamSet, Parameter, Rdn, Shape, Tensor4, Trainer};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 4] = b"URDN";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}; this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not fit the model configuration: {0}")]
    Layout(#[from] LayoutMismatch),
}

/// Everything needed to continue a run: weights with Adam moments,
/// counters, the shuffle stream and the settings that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamSet<f32>,
    pub epoch: u64,
    pub step: u64,
    pub shuffle: RngState,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f32>) -> Self {
        Checkpoint {
            config: RunConfig { model: *trainer.model.config(), train: trainer.config },
            params: trainer.model.params().clone(),
            epoch: trainer.epoch(),
            step: trainer.step(),
            shuffle: rng::snapshot(trainer.shuffle_rng()),
        }
    }

    /// Rebuilds the network under `model`, which may differ from the saved
    /// configuration; the first tensor that does not fit is reported.
    pub fn model_for(&self, model: &ModelConfig) -> Result<Rdn<f32>, CheckpointError> {
        Ok(Rdn::with_params(*model, self.params.clone())?)
    }

    pub fn model(&self) -> Result<Rdn<f32>, CheckpointError> {
        self.model_for(&self.config.model)
    }

    pub fn shuffle_rng(&self) -> Rng {
        rng::restore(&self.shuffle)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in p.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for t in [&p.value, &p.m, &p.v] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.shuffle.seed);
        out.extend_from_slice(&self.shuffle.stream.to_le_bytes());
        out.extend_from_slice(&self.shuffle.word_pos.to_le_bytes());
        out
    }

    /// Decodes a checkpoint and checks its tensor table against its own settings.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() {
            return Err(CheckpointError::Truncated("magic".into()));
        }
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config block")?)
            .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
        let config = RunConfig::parse(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let count = r.u32("tensor count")? as usize;
        let mut params = ParamSet::new();
        for i in 0..count {
            let len = r.u32(&format!("name length of tensor {i}"))? as usize;
            let name = std::str::from_utf8(r.take(len, &format!("name of tensor {i}"))?)
                .map_err(|_| CheckpointError::Malformed(format!("name of tensor {i} is not UTF-8")))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32(&format!("shape of `{name}`"))? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let byte_len = dims.iter().try_fold(4usize, |acc, &d| acc.checked_mul(d));
            let byte_len = byte_len.ok_or_else(|| CheckpointError::Malformed(format!("`{name}` shape overflows")))?;
            let mut read = |what: &str| -> Result<Tensor4<f32>, CheckpointError> {
                let raw = r.take(byte_len, &format!("{what} of `{name}`"))?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor4::from_vec(shape, data).map_err(|e| CheckpointError::Malformed(format!("`{name}`: {e}")))
            };
            let value = read("values")?;
            let m = read("first moments")?;
            let v = read("second moments")?;
            let mut p = Parameter::new(value);
            p.m = m;
            p.v = v;
            params.register(&name, p).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let epoch = r.u64("epoch")?;
        let step = r.u64("step")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Checkpoint { config, params, epoch, step, shuffle: RngState { seed, stream, word_pos } };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes =
            std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(what.into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
