//! The training loop: forward, L1 loss, backward and Adam per batch.

use crate::data::{make_batches, Patch};
use crate::error::{Error, Result};
use crate::model::Rdn;
use crate::optim::{Adam, TrainConfig};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor4;

/// Summary of one pass over the training patches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Zero-based index of the epoch just completed.
    pub epoch: u64,
    /// Global step count after the epoch.
    pub step: u64,
    pub lr: f64,
    pub mean_l1: f64,
    pub batches: usize,
}

/// Mutable training state: weights, moments, counters and the shuffle stream.
pub struct Trainer<T> {
    pub model: Rdn<T>,
    pub config: TrainConfig,
    epoch: u64,
    step: u64,
    shuffle: Rng,
    tape: Tape<T>,
}

impl<T: Real> Trainer<T> {
    /// Starts a fresh run; the shuffle stream is derived from `config.seed`.
    pub fn new(model: Rdn<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let shuffle = rng::stream(config.seed, rng::SHUFFLE);
        Ok(Trainer { model, config, epoch: 0, step: 0, shuffle, tape: Tape::new() })
    }

    /// Continues a run from saved counters and shuffle state.
    pub fn resume(model: Rdn<T>, config: TrainConfig, epoch: u64, step: u64, shuffle: Rng) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { model, config, epoch, step, shuffle, tape: Tape::new() })
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn shuffle_rng(&self) -> &Rng {
        &self.shuffle
    }

    /// Learning rate for the next epoch.
    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    /// One optimizer step on a stacked batch. Returns the batch L1 loss.
    pub fn train_step(&mut self, lr_batch: &Tensor4<T>, hr_batch: &Tensor4<T>, lr: f64) -> Result<f64> {
        self.tape.clear();
        let x = self.tape.leaf(lr_batch.clone());
        let pred = self.model.forward(&mut self.tape, x)?;
        let loss = self.tape.l1_loss(pred, hr_batch)?;
        let value = self.tape.value(loss)?.data()[0].as_f64();
        let params = self.model.params_mut();
        params.zero_grads();
        self.tape.backward(loss, params)?;
        self.step += 1;
        Adam::from(&self.config).step(params, lr, self.step)?;
        Ok(value)
    }

    /// One shuffled pass over `patches` in batches of `batch_train`.
    pub fn train_epoch(&mut self, patches: &[Patch<T>]) -> Result<EpochStats> {
        if patches.is_empty() {
            return Err(Error::usage("training set is empty"));
        }
        let lr = self.current_lr();
        let batches = make_batches(patches, self.config.batch_train, &mut self.shuffle)?;
        let count = batches.len();
        let mut total = 0.0;
        for batch in batches {
            total += self.train_step(&batch.lr, &batch.hr, lr)?;
        }
        let stats = EpochStats { epoch: self.epoch, step: self.step, lr, mean_l1: total / count as f64, batches: count };
        self.epoch += 1;
        Ok(stats)
    }

    pub fn into_model(self) -> Rdn<T> {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_patches, ImagePair};
    use crate::model::ModelConfig;
    use crate::tensor::Shape;
    use alloc::vec::Vec;

    fn tiny() -> ModelConfig {
        ModelConfig { scale: 2, num_rdb: 1, layers_per_rdb: 2, growth: 4, base_channels: 8, ..Default::default() }
    }

    fn patches(count: usize) -> Vec<Patch<f32>> {
        let hr = Tensor4::from_fn(Shape::new(1, 3, 24, 24), |_, c, y, x| {
            0.5 + 0.4 * ((y as f32 * 0.4 + c as f32).sin() * (x as f32 * 0.3).cos())
        })
        .unwrap();
        let pair = ImagePair::from_hr(&hr, 2, "t").unwrap();
        extract_patches(&pair, 4, count, false, &mut rng::stream(0, rng::PATCHES)).unwrap()
    }

    #[test]
    fn empty_dataset_is_usage_error() {
        let mut t = Trainer::new(Rdn::<f32>::new(tiny()).unwrap(), TrainConfig::default()).unwrap();
        assert!(matches!(t.train_epoch(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn batch_count_is_ceiling() {
        let mut model = Rdn::<f32>::new(tiny()).unwrap();
        model.kaiming_init(1);
        let mut t = Trainer::new(model, TrainConfig { batch_train: 8, ..Default::default() }).unwrap();
        let stats = t.train_epoch(&patches(17)).unwrap();
        assert_eq!(stats.batches, 3);
        assert_eq!(stats.step, 3);
        assert_eq!(t.epoch(), 1);
    }

    #[test]
    fn identical_runs_identical_weights() {
        let run = || {
            let mut model = Rdn::<f32>::new(tiny()).unwrap();
            model.kaiming_init(3);
            let mut t = Trainer::new(model, TrainConfig { batch_train: 4, seed: 3, ..Default::default() }).unwrap();
            let p = patches(10);
            for _ in 0..3 {
                t.train_epoch(&p).unwrap();
            }
            t.into_model().into_params()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_init_single_patch_loss_falls() {
        let p = patches(1);
        let mut t = Trainer::new(
            Rdn::<f32>::new(tiny()).unwrap(),
            TrainConfig { batch_train: 1, lr0: 1e-3, ..Default::default() },
        )
        .unwrap();
        let losses: Vec<f64> = (0..200).map(|_| t.train_epoch(&p).unwrap().mean_l1).collect();
        let first: f64 = losses[..50].iter().sum::<f64>() / 50.0;
        let last: f64 = losses[150..].iter().sum::<f64>() / 50.0;
        assert!(losses[199] < losses[0]);
        assert!(last < first, "window means {first} -> {last}");
    }
}
