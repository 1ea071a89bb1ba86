//! Adam with bias correction and the step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::real::Real;

/// Optimizer and loop settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halving_period: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_train: usize,
    pub batch_eval: usize,
    pub epochs: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Side length of low-resolution training patches.
    pub patch_lr: usize,
    /// Random crops taken from each training image per run.
    pub patches_per_image: usize,
    /// Random flips and transposes of training patches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_halving_period: 15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_train: 8,
            batch_eval: 4,
            epochs: 200,
            seed: 0,
            checkpoint_every: 5,
            patch_lr: 32,
            patches_per_image: 16,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::config("lr0 must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(alloc::format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_eps >= 0.0) {
            return Err(Error::config("adam_eps must be non-negative"));
        }
        if self.batch_train == 0 || self.batch_eval == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::config("lr_halving_period must be at least 1"));
        }
        if self.patch_lr == 0 || self.patches_per_image == 0 {
            return Err(Error::config("patch_lr and patches_per_image must be at least 1"));
        }
        Ok(())
    }

    /// `lr0 / 2^floor(epoch / period)`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        lr_at(self.lr0, self.lr_halving_period, epoch)
    }
}

/// Step decay: the rate halves every `period` epochs.
pub fn lr_at(lr0: f64, period: u64, epoch: u64) -> f64 {
    let halvings = (epoch / period).min(2000) as i32;
    lr0 * num_traits::Float::powi(0.5f64, halvings)
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl From<&TrainConfig> for Adam {
    fn from(c: &TrainConfig) -> Self {
        Adam { beta1: c.adam_beta1, beta2: c.adam_beta2, eps: c.adam_eps }
    }
}

impl Adam {
    /// One bias-corrected update at step `t` (1-based), then zeroes gradients.
    pub fn step<T: Real>(&self, params: &mut ParamSet<T>, lr: f64, t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::usage("Adam step count starts at 1"));
        }
        let t = t.min(i32::MAX as u64) as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let c1 = T::from_f64(1.0 - num_traits::Float::powi(self.beta1, t));
        let c2 = T::from_f64(1.0 - num_traits::Float::powi(self.beta2, t));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(self.eps);
        for (_, p) in params.iter_mut() {
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                grad[i] = T::zero();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Parameter;
    use crate::tensor::{Shape, Tensor4};

    fn scalar_set(value: f64, grad: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let mut p = Parameter::new(Tensor4::scalar(value));
        p.grad = Tensor4::scalar(grad);
        ps.register("theta", p).unwrap();
        ps
    }

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(14), 1e-4);
        assert_eq!(c.lr_at(15), 5e-5);
        assert_eq!(c.lr_at(45), 1.25e-5);
        let mut prev = c.lr_at(0);
        for e in 1..200 {
            let lr = c.lr_at(e);
            assert!(lr <= prev);
            if e % 15 != 0 {
                assert_eq!(lr, prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = ParamSet::new();
        let t = Tensor4::from_fn(Shape::new(2, 3, 1, 1), |n, c, _, _| (n * 3 + c) as f32 * 0.1).unwrap();
        ps.register("w", Parameter::new(t.clone())).unwrap();
        Adam::default().step(&mut ps, 1e-4, 1).unwrap();
        assert_eq!(ps.iter().next().unwrap().1.value, t);
    }

    #[test]
    fn first_step_hand_computed() {
        let mut ps = scalar_set(0.0, 1.0);
        Adam::default().step(&mut ps, 1e-4, 1).unwrap();
        let p = ps.iter().next().unwrap().1;
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1
        let expected = -1e-4 * (1.0 / (1.0 + 1e-8));
        assert!((p.value.data()[0] - expected).abs() < 1e-18);
        assert_eq!(p.grad.data()[0], 0.0);
        assert!(p.v.data()[0] >= 0.0);
    }

    #[test]
    fn step_zero_is_usage_error() {
        let mut ps = scalar_set(0.0, 1.0);
        assert!(matches!(Adam::default().step(&mut ps, 1e-4, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn update_magnitude_independent_of_gradient_scale() {
        for g in [1e-3, 1.0, 1e3] {
            let mut ps = scalar_set(0.0, g);
            let adam = Adam::default();
            let mut prev = 0.0;
            for t in 1..=5 {
                ps.iter_mut().next().unwrap().1.grad = Tensor4::scalar(g);
                adam.step(&mut ps, 1e-3, t).unwrap();
                let now = ps.iter().next().unwrap().1.value.data()[0];
                let delta = (now - prev).abs();
                assert!((delta - 1e-3).abs() / 1e-3 < 0.01, "g={g} t={t} delta={delta}");
                prev = now;
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { adam_beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_train: 0, ..Default::default() }.validate().is_err());
    }
}
