//! Training and evaluation runs over image files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rdn_core::metrics::evaluate_pairs;
use rdn_core::{
    extract_patches, rng, EpochStats, ImagePair, MetricOptions, MetricReport, Patch, Rdn, Trainer,
};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::RunError;
use crate::image_io::load_png;
use crate::manifest::Manifest;
use crate::report;

pub const CHECKPOINT_FILE: &str = "checkpoint.urdn";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const RUN_LOG_FILE: &str = "run.log";

/// Loads every manifest image and degrades it by `scale`.
pub fn load_pairs(manifest: &Manifest, scale: usize) -> Result<Vec<ImagePair<f32>>, RunError> {
    manifest
        .paths
        .iter()
        .map(|p| {
            let hr = load_png(p)?;
            Ok(ImagePair::from_hr(&hr, scale, p.display().to_string())?)
        })
        .collect()
}

/// Crops `patches_per_image` aligned patches from every pair, in manifest order.
pub fn build_patches(pairs: &[ImagePair<f32>], config: &RunConfig) -> Result<Vec<Patch<f32>>, RunError> {
    let mut rng = rng::stream(config.train.seed, rng::PATCHES);
    let mut out = Vec::new();
    for pair in pairs {
        out.extend(extract_patches(pair, config.train.patch_lr, config.train.patches_per_image, config.train.augment, &mut rng)?);
    }
    Ok(out)
}

/// Fresh trainer with Kaiming weights, or one continued from a checkpoint.
/// A checkpoint whose tensors do not fit `config.model` is a usage error.
pub fn trainer(config: &RunConfig, resume: Option<&Checkpoint>) -> Result<Trainer<f32>, RunError> {
    config.validate()?;
    match resume {
        Some(ckpt) => {
            let model = ckpt.model_for(&config.model)?;
            Ok(Trainer::resume(model, config.train, ckpt.epoch, ckpt.step, ckpt.shuffle_rng())?)
        }
        None => {
            let mut model = Rdn::new(config.model)?;
            model.kaiming_init(config.train.seed);
            Ok(Trainer::new(model, config.train)?)
        }
    }
}

/// Where a training run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(root).map_err(RunError::io(root))?;
        Ok(RunDir { root: root.into() })
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join(CHECKPOINT_FILE)
    }

    pub fn loss_log(&self) -> PathBuf {
        self.root.join(LOSS_LOG_FILE)
    }

    pub fn run_log(&self) -> PathBuf {
        self.root.join(RUN_LOG_FILE)
    }
}

/// Trains until `trainer.config.epochs` epochs are complete, appending to the
/// loss log each epoch and checkpointing every `checkpoint_every` epochs and
/// at the end. `progress` receives each epoch's stats and wall time.
pub fn run_training(
    trainer: &mut Trainer<f32>,
    patches: &[Patch<f32>],
    dir: &RunDir,
    mut progress: impl FnMut(&EpochStats, Duration),
) -> Result<(), RunError> {
    let config = RunConfig { model: *trainer.model.config(), train: trainer.config };
    let mut log = String::from("# effective configuration\n");
    log.push_str(&config.to_text());
    log.push_str(&format!("# resumed at epoch {} step {}\n", trainer.epoch(), trainer.step()));
    std::fs::write(dir.run_log(), log).map_err(RunError::io(dir.run_log()))?;

    let every = trainer.config.checkpoint_every;
    while trainer.epoch() < trainer.config.epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch(patches)?;
        let elapsed = start.elapsed();
        if !stats.mean_l1.is_finite() {
            return Err(RunError::Core(rdn_core::Error::NonFinite { op: "train_epoch", operand: "loss" }));
        }
        report::append_loss_log(&dir.loss_log(), &[stats]).map_err(RunError::io(dir.loss_log()))?;
        progress(&stats, elapsed);
        if every > 0 && trainer.epoch() % every == 0 {
            Checkpoint::from_trainer(trainer).save(&dir.checkpoint())?;
        }
    }
    Checkpoint::from_trainer(trainer).save(&dir.checkpoint())?;
    Ok(())
}

/// Whole-image evaluation of `model` on every manifest image.
pub fn evaluate(
    model: &Rdn<f32>,
    manifest: &Manifest,
    batch_eval: usize,
    options: &MetricOptions,
) -> Result<MetricReport, RunError> {
    let scale = model.config().scale;
    let pairs = load_pairs(manifest, scale)?;
    let rows = evaluate_pairs(model, &pairs, batch_eval, options)?;
    Ok(MetricReport::new(manifest.name.clone(), scale, model.config().ablation.label(), rows))
}

/// Writes `<stem>.csv` and `<stem>.txt` for a report under `dir`.
pub fn write_report(dir: &Path, stem: &str, report: &MetricReport) -> Result<(PathBuf, PathBuf), RunError> {
    std::fs::create_dir_all(dir).map_err(RunError::io(dir))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let txt_path = dir.join(format!("{stem}.txt"));
    let csv = report::metric_csv(report).map_err(RunError::io(&csv_path))?;
    std::fs::write(&csv_path, csv).map_err(RunError::io(&csv_path))?;
    std::fs::write(&txt_path, report::metric_table(report)).map_err(RunError::io(&txt_path))?;
    Ok((csv_path, txt_path))
}
