//! The residual dense network graph.
//!
//! Four stages run in sequence on low-resolution input:
//!
//! 1. shallow feature extraction: two 3x3 convolutions; both outputs are kept,
//!    the first feeds the global residual, the second the block stack;
//! 2. `D` residual dense blocks chained feed-forward; inside a block each of
//!    the `C` layers convolves the concatenation of the block input and all
//!    earlier layer outputs, a 1x1 fusion compresses everything back to `G0`
//!    channels and the block input is added back;
//! 3. dense feature fusion: 1x1 then 3x3 convolution over all block outputs,
//!    plus the first shallow feature map;
//! 4. sub-pixel upscaling followed by a 3x3 projection to RGB.
//!
//! ReLU appears only after the dense-layer convolutions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamSet, Parameter};
use crate::real::Real;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor4};

/// Switches that remove one connection type each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub disable_global_residual: bool,
    pub disable_dense_connections: bool,
    pub disable_local_residual: bool,
}

impl Ablation {
    pub const VARIANTS: [&'static str; 4] = ["baseline", "no-grl", "no-ldc", "no-lrl"];

    /// Parses a named variant: `baseline`, `no-grl`, `no-ldc` or `no-lrl`.
    pub fn from_variant(name: &str) -> Option<Ablation> {
        let mut a = Ablation::default();
        match name {
            "baseline" => {}
            "no-grl" => a.disable_global_residual = true,
            "no-ldc" => a.disable_dense_connections = true,
            "no-lrl" => a.disable_local_residual = true,
            _ => return None,
        }
        Some(a)
    }

    /// Name of the variant, or `custom` for flag combinations without one.
    pub fn label(&self) -> &'static str {
        match (self.disable_global_residual, self.disable_dense_connections, self.disable_local_residual) {
            (false, false, false) => "baseline",
            (true, false, false) => "no-grl",
            (false, true, false) => "no-ldc",
            (false, false, true) => "no-lrl",
            _ => "custom",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Upscaling factor, one of 2, 3, 4.
    pub scale: usize,
    /// Number of residual dense blocks (`D`).
    pub num_rdb: usize,
    /// Dense layers per block (`C`).
    pub layers_per_rdb: usize,
    /// Channels contributed by each dense layer (`G`).
    pub growth: usize,
    /// Feature width of shallow and fused features (`G0`).
    pub base_channels: usize,
    pub in_channels: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 2,
            num_rdb: 4,
            layers_per_rdb: 3,
            growth: 32,
            base_channels: 64,
            in_channels: 3,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2..=4) {
            return Err(Error::config(format!("unsupported scale {}; expected 2, 3 or 4", self.scale)));
        }
        for (name, v) in [
            ("num_rdb", self.num_rdb),
            ("layers_per_rdb", self.layers_per_rdb),
            ("growth", self.growth),
            ("base_channels", self.base_channels),
            ("in_channels", self.in_channels),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Shuffle factors applied in order: one stage for 2 and 3, two x2 stages for 4.
    pub fn upscale_stages(&self) -> &'static [usize] {
        match self.scale {
            2 => &[2],
            3 => &[3],
            4 => &[2, 2],
            _ => &[],
        }
    }

    /// Input channels of dense layer `l` (0-based).
    pub fn layer_in_channels(&self, l: usize) -> usize {
        if self.ablation.disable_dense_connections {
            if l == 0 {
                self.base_channels
            } else {
                self.growth
            }
        } else {
            self.base_channels + l * self.growth
        }
    }

    /// Input channels of the 1x1 local fusion.
    pub fn lff_in_channels(&self) -> usize {
        if self.ablation.disable_dense_connections {
            self.growth
        } else {
            self.base_channels + self.layers_per_rdb * self.growth
        }
    }

    /// Closed-form parameter count, weights plus biases.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let g0 = self.base_channels;
        let sfe = conv(self.in_channels, g0, 3) + conv(g0, g0, 3);
        let block: usize = (0..self.layers_per_rdb)
            .map(|l| conv(self.layer_in_channels(l), self.growth, 3))
            .sum::<usize>()
            + conv(self.lff_in_channels(), g0, 1);
        let gff = conv(self.num_rdb * g0, g0, 1) + conv(g0, g0, 3);
        let up: usize = self.upscale_stages().iter().map(|&r| conv(g0, g0 * r * r, 3)).sum();
        let out = conv(g0, self.in_channels, 3);
        sfe + self.num_rdb * block + gff + up + out
    }
}

/// Weight and bias handles of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RdbLayout {
    pub layers: Vec<Conv>,
    pub lff: Conv,
}

/// Network weights together with the configuration they were built for.
#[derive(Clone, Debug)]
pub struct Rdn<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    sfe1: Conv,
    sfe2: Conv,
    rdbs: Vec<RdbLayout>,
    gff1x1: Conv,
    gff3x3: Conv,
    up: Vec<Conv>,
    out: Conv,
}

struct Builder<T> {
    params: ParamSet<T>,
}

impl<T: Real> Builder<T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv> {
        let weight = self.params.register(&format!("{name}.weight"), Parameter::zeros(Shape::new(cout, cin, k, k))?)?;
        let bias = self.params.register(&format!("{name}.bias"), Parameter::zeros(Shape::new(cout, 1, 1, 1))?)?;
        Ok(Conv { weight, bias })
    }
}

impl<T: Real> Rdn<T> {
    /// Allocates all parameters, zero-filled.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let g0 = config.base_channels;
        let mut b = Builder { params: ParamSet::new() };
        let sfe1 = b.conv("sfe.conv1", config.in_channels, g0, 3)?;
        let sfe2 = b.conv("sfe.conv2", g0, g0, 3)?;
        let mut rdbs = Vec::with_capacity(config.num_rdb);
        for d in 0..config.num_rdb {
            let layers = (0..config.layers_per_rdb)
                .map(|l| b.conv(&format!("rdb.{d}.layer.{l}"), config.layer_in_channels(l), config.growth, 3))
                .collect::<Result<Vec<_>>>()?;
            let lff = b.conv(&format!("rdb.{d}.lff"), config.lff_in_channels(), g0, 1)?;
            rdbs.push(RdbLayout { layers, lff });
        }
        let gff1x1 = b.conv("gff.conv1x1", config.num_rdb * g0, g0, 1)?;
        let gff3x3 = b.conv("gff.conv3x3", g0, g0, 3)?;
        let up = config
            .upscale_stages()
            .iter()
            .enumerate()
            .map(|(i, &r)| b.conv(&format!("up.pre_shuffle.{i}"), g0, g0 * r * r, 3))
            .collect::<Result<Vec<_>>>()?;
        let out = b.conv("out.conv", g0, config.in_channels, 3)?;
        Ok(Rdn { config, params: b.params, sfe1, sfe2, rdbs, gff1x1, gff3x3, up, out })
    }

    /// Builds the network around an existing parameter set, checking that
    /// names, order and shapes agree with `config`.
    pub fn with_params(config: ModelConfig, params: ParamSet<T>) -> core::result::Result<Self, LayoutMismatch> {
        let mut rdn = Rdn::new(config).map_err(LayoutMismatch::Config)?;
        let expected = &rdn.params;
        for (i, (name, p)) in expected.iter().enumerate() {
            match params.find(name) {
                None => return Err(LayoutMismatch::Missing(name.into())),
                Some(id) if id.index() != i => return Err(LayoutMismatch::Order(name.into())),
                Some(id) => {
                    let got = params.get(id).shape();
                    if got != p.shape() {
                        return Err(LayoutMismatch::Shape { name: name.into(), expected: p.shape(), found: got });
                    }
                }
            }
        }
        if params.len() != expected.len() {
            let extra = params.iter().map(|(n, _)| n).find(|n| expected.find(n).is_none()).unwrap_or("?");
            return Err(LayoutMismatch::Unexpected(extra.into()));
        }
        rdn.params = params;
        Ok(rdn)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn sfe_convs(&self) -> (Conv, Conv) {
        (self.sfe1, self.sfe2)
    }

    pub fn rdb_layout(&self, d: usize) -> &RdbLayout {
        &self.rdbs[d]
    }

    pub fn gff_convs(&self) -> (Conv, Conv) {
        (self.gff1x1, self.gff3x3)
    }

    pub fn upscale_convs(&self) -> &[Conv] {
        &self.up
    }

    pub fn out_conv(&self) -> Conv {
        self.out
    }

    /// Copies the network into another precision.
    pub fn cast<U: Real>(&self) -> Rdn<U> {
        Rdn {
            config: self.config,
            params: self.params.cast(),
            sfe1: self.sfe1,
            sfe2: self.sfe2,
            rdbs: self.rdbs.clone(),
            gff1x1: self.gff1x1,
            gff3x3: self.gff3x3,
            up: self.up.clone(),
            out: self.out,
        }
    }

    fn conv(&self, tape: &mut Tape<T>, x: Var, c: Conv) -> Result<Var> {
        tape.conv2d(&self.params, x, c.weight, c.bias)
    }

    /// Shallow features: returns `(f_minus1, f0)`.
    pub fn sfe_forward(&self, tape: &mut Tape<T>, img: Var) -> Result<(Var, Var)> {
        let f_minus1 = self.conv(tape, img, self.sfe1)?;
        let f0 = self.conv(tape, f_minus1, self.sfe2)?;
        Ok((f_minus1, f0))
    }

    /// One residual dense block.
    pub fn rdb_forward(&self, tape: &mut Tape<T>, d: usize, f_prev: Var) -> Result<Var> {
        let block = self
            .rdbs
            .get(d)
            .ok_or_else(|| Error::usage(format!("block index {d} out of range for {} blocks", self.rdbs.len())))?;
        let ablation = self.config.ablation;
        let mut features = Vec::with_capacity(block.layers.len() + 1);
        features.push(f_prev);
        let mut last = f_prev;
        for &layer in &block.layers {
            let input = if ablation.disable_dense_connections { last } else { tape.concat_channels(&features)? };
            let x = self.conv(tape, input, layer)?;
            last = tape.relu(x)?;
            features.push(last);
        }
        let fusion_in = if ablation.disable_dense_connections { last } else { tape.concat_channels(&features)? };
        let fused = self.conv(tape, fusion_in, block.lff)?;
        if ablation.disable_local_residual {
            Ok(fused)
        } else {
            tape.add(fused, f_prev)
        }
    }

    /// Global feature fusion plus the global residual.
    pub fn dff_forward(&self, tape: &mut Tape<T>, f_minus1: Var, rdb_outputs: &[Var]) -> Result<Var> {
        if rdb_outputs.len() != self.config.num_rdb {
            return Err(Error::usage(format!(
                "dense feature fusion expects {} block outputs, got {}",
                self.config.num_rdb,
                rdb_outputs.len()
            )));
        }
        let cat = tape.concat_channels(rdb_outputs)?;
        let reduced = self.conv(tape, cat, self.gff1x1)?;
        let gf = self.conv(tape, reduced, self.gff3x3)?;
        if self.config.ablation.disable_global_residual {
            Ok(gf)
        } else {
            tape.add(f_minus1, gf)
        }
    }

    /// Sub-pixel upscaling and RGB projection. Output is not clamped.
    pub fn upscale_forward(&self, tape: &mut Tape<T>, f_dff: Var) -> Result<Var> {
        let mut x = f_dff;
        for (&conv, &r) in self.up.iter().zip(self.config.upscale_stages()) {
            let pre = self.conv(tape, x, conv)?;
            x = tape.pixel_shuffle(pre, r)?;
        }
        self.conv(tape, x, self.out)
    }

    /// Full network on a recorded input.
    pub fn forward(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let (f_minus1, f0) = self.sfe_forward(tape, img)?;
        let mut outputs = Vec::with_capacity(self.config.num_rdb);
        let mut f = f0;
        for d in 0..self.config.num_rdb {
            f = self.rdb_forward(tape, d, f)?;
            outputs.push(f);
        }
        let fused = self.dff_forward(tape, f_minus1, &outputs)?;
        self.upscale_forward(tape, fused)
    }

    /// Forward pass outside of training. The result is not clamped.
    pub fn predict(&self, img: &Tensor4<T>) -> Result<Tensor4<T>> {
        if img.shape().c != self.config.in_channels {
            return Err(Error::dim(
                "model_forward",
                "img_lr",
                format!("expected {} channels, got {}", self.config.in_channels, img.shape().c),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(img.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y)?.clone())
    }

    /// He-normal initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn kaiming_init(&mut self, seed: u64) {
        let mut rng = rng::stream(seed, rng::INIT);
        for (name, p) in self.params.iter_mut() {
            if name.ends_with(".bias") {
                p.value.fill(T::zero());
                continue;
            }
            let s = p.value.shape();
            let fan_in = (s.c * s.h * s.w) as f64;
            let normal = Normal::new(0.0, num_traits::Float::sqrt(2.0 / fan_in)).expect("positive std");
            for v in p.value.data_mut() {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
    }
}

/// Why a parameter set does not fit a configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum LayoutMismatch {
    Config(Error),
    Missing(String),
    Unexpected(String),
    Order(String),
    Shape { name: String, expected: Shape, found: Shape },
}

impl core::fmt::Display for LayoutMismatch {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LayoutMismatch::Config(e) => write!(f, "{e}"),
            LayoutMismatch::Missing(n) => write!(f, "tensor `{n}` missing"),
            LayoutMismatch::Unexpected(n) => write!(f, "unexpected tensor `{n}`"),
            LayoutMismatch::Order(n) => write!(f, "tensor `{n}` out of order"),
            LayoutMismatch::Shape { name, expected, found } => {
                write!(f, "tensor `{name}` has shape {found}, expected {expected}")
            }
        }
    }
}

impl core::error::Error for LayoutMismatch {}
