//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rdn_core::gradcheck;
use rdn_core::resample::{bicubic_downsample, crop_to_multiple};
use rdn_core::{Ablation, MetricOptions, OpKind};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::RunError;
use crate::image_io::{load_png, save_png};
use crate::manifest::Manifest;
use crate::report::{self, AblationRow};
use crate::session::{self, RunDir};

#[derive(Debug, Parser)]
#[command(name = "rdn", version, about = "Residual dense network super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write bicubic-downsampled copies `<stem>_x{r}.png` of every manifest image.
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the manifest images.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Run directory for the checkpoint, loss log and run log.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint under the given configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue a run with the configuration stored in its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        epochs: Option<u64>,
    },
    /// Super-resolve one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Low-resolution PNG.
        input: PathBuf,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Expected scale; must match the checkpoint.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Score a checkpoint on a manifest of ground-truth images.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scale: Option<usize>,
        #[command(flatten)]
        metric: MetricArgs,
        /// Directory for the CSV and text reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score one ablation variant, appending a row to `ablation.csv`.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Held-out images; defaults to the training manifest.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every autodiff operation and a small network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true, value_name = "OP")]
        inject_fault: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// baseline, no-grl, no-ldc or no-lrl.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Border pixels ignored on each side.
    #[arg(long, default_value_t = 0)]
    pub shave: usize,
    /// Score BT.601 luma instead of RGB.
    #[arg(long)]
    pub luma_only: bool,
}

impl MetricArgs {
    fn options(&self) -> MetricOptions {
        MetricOptions { shave: self.shave, luma_only: self.luma_only }
    }
}

fn variant(name: &str) -> Result<Ablation, RunError> {
    Ablation::from_variant(name).ok_or_else(|| {
        RunError::Usage(format!("unknown variant `{name}`; expected one of {}", Ablation::VARIANTS.join(", ")))
    })
}

impl ConfigArgs {
    /// File, then `--set` overrides, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig, RunError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(RunError::io(p))?)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(r) = self.scale {
            cfg.model.scale = r;
        }
        if let Some(v) = &self.variant {
            cfg.model.ablation = variant(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_scale(r: usize) -> Result<(), RunError> {
    if matches!(r, 2..=4) {
        Ok(())
    } else {
        Err(RunError::Usage(format!("scale must be 2, 3 or 4, got {r}")))
    }
}

fn print_epoch(stats: &rdn_core::EpochStats, wall: std::time::Duration) {
    println!(
        "epoch {:>4}  step {:>7}  lr {:.3e}  l1 {:.6}  {:.2}s",
        stats.epoch,
        stats.step,
        stats.lr,
        stats.mean_l1,
        wall.as_secs_f64()
    );
}

fn train(config: &RunConfig, manifest: &Path, out: &Path, resume: Option<&Checkpoint>) -> Result<Checkpoint, RunError> {
    let manifest = Manifest::load(manifest)?;
    let pairs = session::load_pairs(&manifest, config.model.scale)?;
    let patches = session::build_patches(&pairs, config)?;
    let mut trainer = session::trainer(config, resume)?;
    let dir = RunDir::create(out)?;
    println!("training on {} patches from {} images", patches.len(), pairs.len());
    session::run_training(&mut trainer, &patches, &dir, print_epoch)?;
    println!("checkpoint written to {}", dir.checkpoint().display());
    Ok(Checkpoint::from_trainer(&trainer))
}

fn degrade(manifest: &Path, scale: usize, out: &Path) -> Result<(), RunError> {
    check_scale(scale)?;
    let manifest = Manifest::load(manifest)?;
    std::fs::create_dir_all(out).map_err(RunError::io(out))?;
    let mut failures = 0;
    for path in &manifest.paths {
        let result = (|| -> Result<PathBuf, RunError> {
            let hr = crop_to_multiple(&load_png(path)?, scale)?;
            let lr = bicubic_downsample(&hr, scale)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let dest = out.join(format!("{stem}_x{scale}.png"));
            save_png(&dest, &lr)?;
            Ok(dest)
        })();
        match result {
            Ok(dest) => println!("{}", dest.display()),
            Err(e) => {
                eprintln!("error: {e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(RunError::Failed(format!("{failures} of {} images failed", manifest.paths.len())));
    }
    Ok(())
}

fn eval(checkpoint: &Path, manifest: &Path, scale: Option<usize>, metric: &MetricArgs, out: Option<&Path>) -> Result<(), RunError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.model()?;
    if let Some(r) = scale.filter(|&r| r != model.config().scale) {
        return Err(RunError::Usage(format!("checkpoint is for scale {}, not {r}", model.config().scale)));
    }
    let manifest = Manifest::load(manifest)?;
    let report = session::evaluate(&model, &manifest, ckpt.config.train.batch_eval, &metric.options())?;
    print!("{}", report::metric_table(&report));
    if let Some(dir) = out {
        let (csv, _) = session::write_report(dir, &format!("{}_x{}", report.dataset, report.scale), &report)?;
        println!("report written to {}", csv.display());
    }
    Ok(())
}

fn infer(checkpoint: &Path, input: &Path, out: &Path, scale: Option<usize>) -> Result<(), RunError> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    if let Some(r) = scale.filter(|&r| r != model.config().scale) {
        return Err(RunError::Usage(format!("checkpoint is for scale {}, not {r}", model.config().scale)));
    }
    let lr = load_png(input)?;
    let sr = model.predict(&lr)?.map(|v| v.clamp(0.0, 1.0));
    save_png(out, &sr)?;
    println!("{}", out.display());
    Ok(())
}

fn ablate(
    config: &RunConfig,
    manifest: &Path,
    eval_manifest: Option<&Path>,
    metric: &MetricArgs,
    out: &Path,
) -> Result<(), RunError> {
    let label = config.model.ablation.label();
    let run_dir = out.join(label);
    let ckpt = train(config, manifest, &run_dir, None)?;
    let eval_set = Manifest::load(eval_manifest.unwrap_or(manifest))?;
    let report = session::evaluate(&ckpt.model()?, &eval_set, config.train.batch_eval, &metric.options())?;
    session::write_report(&run_dir, &format!("{}_x{}", report.dataset, report.scale), &report)?;
    let row = AblationRow {
        variant: label.into(),
        dataset: report.dataset.clone(),
        scale: report.scale,
        epochs: config.train.epochs,
        seed: config.train.seed,
        psnr_db: report.mean_psnr_db,
        ssim: report.mean_ssim,
    };
    let csv = out.join("ablation.csv");
    report::append_ablation(&csv, &row).map_err(RunError::io(&csv))?;
    print!("{}", report::metric_table(&report));
    Ok(())
}

fn gradcheck_cmd(seed: u64, fault: Option<&str>) -> Result<(), RunError> {
    let fault = match fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| RunError::Usage(format!("unknown op `{name}`")))?),
        None => None,
    };
    let report = gradcheck::run_suite(seed, fault)?;
    for r in &report.results {
        println!(
            "{:<4} {:<40} max rel err {:.3e}  ({} checked, {} skipped)",
            if r.passed() { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped
        );
    }
    if report.passed() {
        println!("all gradients within {:e}", gradcheck::TOLERANCE);
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
        Err(RunError::Failed(format!("gradient check failed: {}", names.join(", "))))
    }
}

pub fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Degrade { manifest, scale, out } => degrade(&manifest, scale, &out),
        Command::Train { config, manifest, out, resume } => {
            let cfg = config.resolve()?;
            let ckpt = resume.as_deref().map(Checkpoint::load).transpose()?;
            train(&cfg, &manifest, &out, ckpt.as_ref()).map(drop)
        }
        Command::Resume { checkpoint, manifest, out, overrides, epochs } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut cfg = ckpt.config;
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            train(&cfg, &manifest, &out, Some(&ckpt)).map(drop)
        }
        Command::Infer { checkpoint, input, out, scale } => infer(&checkpoint, &input, &out, scale),
        Command::Eval { checkpoint, manifest, scale, metric, out } => {
            eval(&checkpoint, &manifest, scale, &metric, out.as_deref())
        }
        Command::Ablate { config, manifest, eval_manifest, metric, out } => {
            let cfg = config.resolve()?;
            if config.variant.is_none() {
                return Err(RunError::Usage("ablate needs --variant".into()));
            }
            ablate(&cfg, &manifest, eval_manifest.as_deref(), &metric, &out)
        }
        Command::Gradcheck { seed, inject_fault } => gradcheck_cmd(seed, inject_fault.as_deref()),
    }
}
