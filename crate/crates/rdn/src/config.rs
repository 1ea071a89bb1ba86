//! Line-based run configuration.
//!
//! ```text
//! # comment
//! model.num_rdb = 4
//! train.lr0 = 1e-4
//! ```
//!
//! Keys are dotted and flat. Unknown keys are rejected. Later assignments win,
//! which is how `--set key=value` overrides a file.

use std::fmt::Write as _;

use rdn_core::{ModelConfig, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Model and training settings for one run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "model.scale",
    "model.num_rdb",
    "model.layers_per_rdb",
    "model.growth",
    "model.base_channels",
    "model.in_channels",
    "model.ablation.disable_global_residual",
    "model.ablation.disable_dense_connections",
    "model.ablation.disable_local_residual",
    "train.lr0",
    "train.lr_halving_period",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.batch_train",
    "train.batch_eval",
    "train.epochs",
    "train.seed",
    "train.checkpoint_every",
    "train.patch_lr",
    "train.patches_per_image",
    "train.augment",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into(), expected })
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies every assignment in `text`, in order.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.trim().into() })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: assignment.into() })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        const COUNT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        const FLAG: &str = "true or false";
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model.scale" => m.scale = parse(key, value, COUNT)?,
            "model.num_rdb" => m.num_rdb = parse(key, value, COUNT)?,
            "model.layers_per_rdb" => m.layers_per_rdb = parse(key, value, COUNT)?,
            "model.growth" => m.growth = parse(key, value, COUNT)?,
            "model.base_channels" => m.base_channels = parse(key, value, COUNT)?,
            "model.in_channels" => m.in_channels = parse(key, value, COUNT)?,
            "model.ablation.disable_global_residual" => m.ablation.disable_global_residual = parse(key, value, FLAG)?,
            "model.ablation.disable_dense_connections" => {
                m.ablation.disable_dense_connections = parse(key, value, FLAG)?
            }
            "model.ablation.disable_local_residual" => m.ablation.disable_local_residual = parse(key, value, FLAG)?,
            "train.lr0" => t.lr0 = parse(key, value, REAL)?,
            "train.lr_halving_period" => t.lr_halving_period = parse(key, value, COUNT)?,
            "train.adam_beta1" => t.adam_beta1 = parse(key, value, REAL)?,
            "train.adam_beta2" => t.adam_beta2 = parse(key, value, REAL)?,
            "train.adam_eps" => t.adam_eps = parse(key, value, REAL)?,
            "train.batch_train" => t.batch_train = parse(key, value, COUNT)?,
            "train.batch_eval" => t.batch_eval = parse(key, value, COUNT)?,
            "train.epochs" => t.epochs = parse(key, value, COUNT)?,
            "train.seed" => t.seed = parse(key, value, COUNT)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value, COUNT)?,
            "train.patch_lr" => t.patch_lr = parse(key, value, COUNT)?,
            "train.patches_per_image" => t.patches_per_image = parse(key, value, COUNT)?,
            "train.augment" => t.augment = parse(key, value, FLAG)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t) = (&self.model, &self.train);
        Some(match key {
            "model.scale" => m.scale.to_string(),
            "model.num_rdb" => m.num_rdb.to_string(),
            "model.layers_per_rdb" => m.layers_per_rdb.to_string(),
            "model.growth" => m.growth.to_string(),
            "model.base_channels" => m.base_channels.to_string(),
            "model.in_channels" => m.in_channels.to_string(),
            "model.ablation.disable_global_residual" => m.ablation.disable_global_residual.to_string(),
            "model.ablation.disable_dense_connections" => m.ablation.disable_dense_connections.to_string(),
            "model.ablation.disable_local_residual" => m.ablation.disable_local_residual.to_string(),
            "train.lr0" => format!("{:?}", t.lr0),
            "train.lr_halving_period" => t.lr_halving_period.to_string(),
            "train.adam_beta1" => format!("{:?}", t.adam_beta1),
            "train.adam_beta2" => format!("{:?}", t.adam_beta2),
            "train.adam_eps" => format!("{:?}", t.adam_eps),
            "train.batch_train" => t.batch_train.to_string(),
            "train.batch_eval" => t.batch_eval.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "train.patch_lr" => t.patch_lr.to_string(),
            "train.patches_per_image" => t.patches_per_image.to_string(),
            "train.augment" => t.augment.to_string(),
            _ => return None,
        })
    }

    /// All settings as `key = value` lines. Parsing the result gives `self` back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
