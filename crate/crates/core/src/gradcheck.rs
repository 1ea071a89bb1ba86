//! Finite-difference verification of every tape operation and of the full
//! network, in 64-bit precision.
//!
//! Each check builds a scalar loss (usually a random projection of an op's
//! output), records analytic gradients with one backward pass, and compares
//! them against central differences `(L(x + h) - L(x - h)) / 2h`. Coordinates
//! whose perturbation flips a ReLU or L1 branch are skipped, since the
//! difference quotient is not a derivative there.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{Ablation, ModelConfig, Rdn};
use crate::param::{ParamId, ParamSet, Parameter};
use crate::rng::{self, Rng};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::{Shape, Tensor4};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that are zero up to
/// rounding do not divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed())
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &ParamSet<f64>, &[Var]) -> Result<Var> + 'a;

fn evaluate(build: &Build<'_>, params: &ParamSet<f64>, inputs: &[Tensor4<f64>]) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, params, &vars)?;
    Ok((tape.value(loss)?.data()[0], tape.branch_signature()))
}

fn sample_indices(len: usize, max: usize) -> impl Iterator<Item = usize> {
    let stride = len.div_ceil(max.max(1)).max(1);
    (0..len).step_by(stride)
}

/// Compares analytic and numeric gradients for every input tensor and every
/// parameter, probing at most `max_coords` entries per tensor.
pub fn check(
    name: &str,
    params: &mut ParamSet<f64>,
    inputs: &mut [Tensor4<f64>],
    build: &Build<'_>,
    max_coords: usize,
    fault: Option<OpKind>,
) -> Result<CheckResult> {
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, params, &vars)?;
    let base_sig = tape.branch_signature();
    params.zero_grads();
    let grads = tape.backward(loss, params)?;
    let input_grads: Vec<Tensor4<f64>> = vars
        .iter()
        .zip(inputs.iter())
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor4::zeros(t.shape()).expect("valid shape")))
        .collect();
    let param_grads: Vec<Tensor4<f64>> = params.ids().map(|id| params.get(id).grad.clone()).collect();

    let mut result = CheckResult { name: name.into(), max_rel_error: 0.0, checked: 0, skipped: 0 };
    let mut record = |analytic: f64, plus: (f64, u64), minus: (f64, u64)| {
        if plus.1 != base_sig || minus.1 != base_sig {
            result.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * STEP);
        result.max_rel_error = result.max_rel_error.max(relative_error(analytic, numeric));
        result.checked += 1;
    };

    for k in 0..inputs.len() {
        for i in sample_indices(inputs[k].shape().len(), max_coords) {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + STEP;
            let plus = evaluate(build, params, inputs)?;
            inputs[k].data_mut()[i] = orig - STEP;
            let minus = evaluate(build, params, inputs)?;
            inputs[k].data_mut()[i] = orig;
            record(input_grads[k].data()[i], plus, minus);
        }
    }
    let ids: Vec<ParamId> = params.ids().collect();
    for (k, &id) in ids.iter().enumerate() {
        for i in sample_indices(params.get(id).shape().len(), max_coords) {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + STEP;
            let plus = evaluate(build, params, inputs)?;
            params.get_mut(id).value.data_mut()[i] = orig - STEP;
            let minus = evaluate(build, params, inputs)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            record(param_grads[k].data()[i], plus, minus);
        }
    }
    Ok(result)
}

fn normal(shape: Shape, scale: f64, rng: &mut Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    }).expect("valid shape")
}

fn uniform(shape: Shape, rng: &mut Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.random::<f64>()).expect("valid shape")
}

/// Values with magnitude in `[0.1, 1]` and random sign; keeps ReLU inputs and
/// L1 residuals away from their kinks.
fn away_from_zero(shape: Shape, rng: &mut Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| {
        let m = 0.1 + 0.9 * rng.random::<f64>();
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
    .expect("valid shape")
}

fn conv_params(cout: usize, cin: usize, k: usize, rng: &mut Rng) -> (ParamSet<f64>, ParamId, ParamId) {
    let mut ps = ParamSet::new();
    let w = ps.register("weight", Parameter::new(normal(Shape::new(cout, cin, k, k), 0.5, rng))).expect("fresh set");
    let b = ps.register("bias", Parameter::new(normal(Shape::new(cout, 1, 1, 1), 0.5, rng))).expect("fresh set");
    (ps, w, b)
}

/// Tiny composite configuration used by the full-network checks.
pub fn composite_config(scale: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig { scale, num_rdb: 2, layers_per_rdb: 2, growth: 4, base_channels: 8, in_channels: 3, ablation }
}

/// Full-network check: random projection of the output of a Kaiming-initialized
/// network (with random biases) on an `size x size` input.
pub fn check_composite(
    config: ModelConfig,
    size: usize,
    seed: u64,
    max_coords: usize,
    fault: Option<OpKind>,
) -> Result<CheckResult> {
    let mut rng = rng::stream(seed, "gradcheck.composite");
    let mut model: Rdn<f64> = Rdn::new(config)?;
    model.kaiming_init(seed);
    let bias_ids: Vec<ParamId> = model.params().ids().filter(|&id| model.params().name(id).ends_with(".bias")).collect();
    for id in bias_ids {
        let s = model.params().get(id).shape();
        model.params_mut().get_mut(id).value = normal(s, 0.1, &mut rng);
    }
    let r = config.scale;
    let out_shape = Shape::new(1, config.in_channels, r * size, r * size);
    let proj = normal(out_shape, 1.0 / (out_shape.len() as f64).sqrt(), &mut rng);
    let mut inputs = [uniform(Shape::new(1, config.in_channels, size, size), &mut rng)];
    let build = move |tape: &mut Tape<f64>, params: &ParamSet<f64>, v: &[Var]| -> Result<Var> {
        // The layout is fixed; only the parameter values vary between calls.
        let net = Rdn::with_params(config, params.clone()).map_err(|e| crate::Error::Usage(format!("{e}")))?;
        let y = net.forward(tape, v[0])?;
        tape.project(y, &proj)
    };
    let mut params = model.into_params();
    let name = format!("rdn composite x{r} {} ({size}x{size})", config.ablation.label());
    check(&name, &mut params, &mut inputs, &build, max_coords, fault)
}

/// Every tape operation plus composite networks at all scales and ablations.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<GradcheckReport> {
    let mut rng = rng::stream(seed, "gradcheck.ops");
    let mut results = Vec::new();
    const ALL: usize = usize::MAX;

    {
        let (mut ps, w, b) = conv_params(4, 3, 3, &mut rng);
        let proj = normal(Shape::new(2, 4, 5, 6), 1.0, &mut rng);
        let mut inputs = [normal(Shape::new(2, 3, 5, 6), 1.0, &mut rng)];
        let build = |t: &mut Tape<f64>, p: &ParamSet<f64>, v: &[Var]| {
            let y = t.conv2d(p, v[0], w, b)?;
            t.project(y, &proj)
        };
        results.push(check("conv2d 3x3", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let (mut ps, w, b) = conv_params(2, 5, 1, &mut rng);
        let proj = normal(Shape::new(1, 2, 4, 3), 1.0, &mut rng);
        let mut inputs = [normal(Shape::new(1, 5, 4, 3), 1.0, &mut rng)];
        let build = |t: &mut Tape<f64>, p: &ParamSet<f64>, v: &[Var]| {
            let y = t.conv2d(p, v[0], w, b)?;
            t.project(y, &proj)
        };
        results.push(check("conv2d 1x1", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let mut ps = ParamSet::new();
        let s = Shape::new(2, 3, 4, 4);
        let proj = normal(s, 1.0, &mut rng);
        let mut inputs = [away_from_zero(s, &mut rng)];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| {
            let y = t.relu(v[0])?;
            t.project(y, &proj)
        };
        results.push(check("relu", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let mut ps = ParamSet::new();
        let proj = normal(Shape::new(2, 6, 3, 3), 1.0, &mut rng);
        let mut inputs = [
            normal(Shape::new(2, 2, 3, 3), 1.0, &mut rng),
            normal(Shape::new(2, 3, 3, 3), 1.0, &mut rng),
            normal(Shape::new(2, 1, 3, 3), 1.0, &mut rng),
        ];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| {
            let y = t.concat_channels(v)?;
            t.project(y, &proj)
        };
        results.push(check("concat_channels", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let mut ps = ParamSet::new();
        let s = Shape::new(1, 3, 4, 5);
        let proj = normal(s, 1.0, &mut rng);
        let mut inputs = [normal(s, 1.0, &mut rng), normal(s, 1.0, &mut rng)];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| {
            let y = t.add(v[0], v[1])?;
            t.project(y, &proj)
        };
        results.push(check("add", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    for r in [2usize, 3] {
        let mut ps = ParamSet::new();
        let proj = normal(Shape::new(2, 2, 3 * r, 2 * r), 1.0, &mut rng);
        let mut inputs = [normal(Shape::new(2, 2 * r * r, 3, 2), 1.0, &mut rng)];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| {
            let y = t.pixel_shuffle(v[0], r)?;
            t.project(y, &proj)
        };
        results.push(check(&format!("pixel_shuffle r={r}"), &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let mut ps = ParamSet::new();
        let s = Shape::new(2, 3, 3, 4);
        let pred = normal(s, 1.0, &mut rng);
        let offsets = away_from_zero(s, &mut rng);
        let target = Tensor4::from_vec(s, pred.data().iter().zip(offsets.data()).map(|(p, o)| p + o).collect())?;
        let mut inputs = [pred];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| t.l1_loss(v[0], &target);
        results.push(check("l1_loss", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let mut ps = ParamSet::new();
        let s = Shape::new(2, 3, 3, 4);
        let target = normal(s, 1.0, &mut rng);
        let mut inputs = [normal(s, 1.0, &mut rng)];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| t.mse_loss(v[0], &target);
        results.push(check("mse_loss", &mut ps, &mut inputs, &build, ALL, fault)?);
    }
    {
        let mut ps = ParamSet::new();
        let s = Shape::new(1, 2, 3, 3);
        let proj = normal(s, 1.0, &mut rng);
        let mut inputs = [normal(s, 1.0, &mut rng)];
        let build = |t: &mut Tape<f64>, _: &ParamSet<f64>, v: &[Var]| t.project(v[0], &proj);
        results.push(check("project", &mut ps, &mut inputs, &build, ALL, fault)?);
    }

    results.push(check_composite(composite_config(2, Ablation::default()), 8, seed, ALL, fault)?);
    for r in [3, 4] {
        results.push(check_composite(composite_config(r, Ablation::default()), 8, seed, 16, fault)?);
    }
    for variant in ["no-grl", "no-ldc", "no-lrl"] {
        let ablation = Ablation::from_variant(variant).expect("known variant");
        results.push(check_composite(composite_config(2, ablation), 8, seed, 16, fault)?);
    }
    Ok(GradcheckReport { results })
}
