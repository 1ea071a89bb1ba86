//! Optimizer and training-loop behavior over several steps.

use rdn_core::data::{extract_patches, ImagePair};
use rdn_core::model::{ModelConfig, Rdn};
use rdn_core::{rng, Adam, Shape, Tape, Tensor4, TrainConfig, Trainer};

fn small() -> ModelConfig {
    ModelConfig { scale: 2, num_rdb: 2, layers_per_rdb: 2, growth: 4, base_channels: 8, ..Default::default() }
}

fn scene() -> Tensor4<f32> {
    Tensor4::from_fn(Shape::new(1, 3, 32, 32), |_, c, y, x| {
        let (fy, fx) = (y as f32, x as f32);
        (0.5 + 0.3 * (0.3 * fx + 0.2 * fy + c as f32).sin() + if (x / 6 + y / 5) % 2 == 0 { 0.1 } else { -0.1 }).clamp(0.0, 1.0)
    })
    .unwrap()
}

#[test]
fn small_step_on_squared_error_does_not_increase_loss() {
    let mut model = Rdn::<f64>::new(small()).unwrap();
    model.kaiming_init(2);
    let pair = ImagePair::from_hr(&scene().cast::<f64>(), 2, "s").unwrap();
    let loss_of = |model: &Rdn<f64>| {
        let mut tape = Tape::new();
        let x = tape.leaf(pair.lr.clone());
        let y = model.forward(&mut tape, x).unwrap();
        let l = tape.mse_loss(y, &pair.hr).unwrap();
        (tape.value(l).unwrap().data()[0], tape, l)
    };
    let (before, mut tape, l) = loss_of(&model);
    tape.backward(l, model.params_mut()).unwrap();
    Adam::from(&TrainConfig::default()).step(model.params_mut(), 1e-6, 1).unwrap();
    let (after, _, _) = loss_of(&model);
    assert!(after <= before + 1e-6, "{before} -> {after}");
}

fn patches(seed: u64) -> Vec<rdn_core::Patch<f32>> {
    let pair = ImagePair::from_hr(&scene(), 2, "s").unwrap();
    extract_patches(&pair, 8, 12, false, &mut rng::stream(seed, rng::PATCHES)).unwrap()
}

#[test]
fn resumed_trainer_matches_uninterrupted_run() {
    let config = TrainConfig { batch_train: 4, lr0: 1e-3, seed: 9, lr_halving_period: 2, ..Default::default() };
    let data = patches(9);
    let fresh = || {
        let mut m = Rdn::<f32>::new(small()).unwrap();
        m.kaiming_init(9);
        Trainer::new(m, config).unwrap()
    };

    let mut straight = fresh();
    for _ in 0..6 {
        straight.train_epoch(&data).unwrap();
    }

    let mut first = fresh();
    for _ in 0..3 {
        first.train_epoch(&data).unwrap();
    }
    let saved = rng::snapshot(first.shuffle_rng());
    let (epoch, step) = (first.epoch(), first.step());
    let params = first.into_model().into_params();
    let model = Rdn::with_params(small(), params).unwrap();
    let mut second = Trainer::resume(model, config, epoch, step, rng::restore(&saved)).unwrap();
    for _ in 0..3 {
        second.train_epoch(&data).unwrap();
    }
    assert_eq!(second.step(), straight.step());
    assert_eq!(second.into_model().into_params(), straight.into_model().into_params());
}

#[test]
fn lr_column_follows_schedule() {
    let config = TrainConfig { batch_train: 6, lr0: 1e-3, lr_halving_period: 2, ..Default::default() };
    let mut m = Rdn::<f32>::new(small()).unwrap();
    m.kaiming_init(0);
    let mut t = Trainer::new(m, config).unwrap();
    let data = patches(1);
    let lrs: Vec<f64> = (0..5).map(|_| t.train_epoch(&data).unwrap().lr).collect();
    assert_eq!(lrs, [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4]);
}
