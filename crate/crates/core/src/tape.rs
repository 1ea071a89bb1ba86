//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward operation appends a node holding its output value and the
//! indices of its inputs. Inputs always precede outputs, so walking the node
//! list backwards is a valid reverse topological order. Parameters are not
//! copied onto the tape: convolution nodes hold [`ParamId`]s and read the
//! live values from the [`ParamSet`] passed to each call.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels;
use crate::param::{ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::{Shape, Tensor4};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

/// Operation kinds, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv2d,
    Relu,
    Concat,
    Add,
    PixelShuffle,
    L1Loss,
    MseLoss,
    Project,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::Concat,
        OpKind::Add,
        OpKind::PixelShuffle,
        OpKind::L1Loss,
        OpKind::MseLoss,
        OpKind::Project,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::Concat => "concat_channels",
            OpKind::Add => "add",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::L1Loss => "l1_loss",
            OpKind::MseLoss => "mse_loss",
            OpKind::Project => "project",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: usize, weight: ParamId, bias: ParamId },
    Relu { input: usize },
    Concat { inputs: Vec<usize> },
    Add { a: usize, b: usize },
    PixelShuffle { input: usize, r: usize },
    L1Loss { pred: usize, target: Tensor4<T> },
    MseLoss { pred: usize, target: Tensor4<T> },
    Project { input: usize, weights: Tensor4<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu { .. } => OpKind::Relu,
            Op::Concat { .. } => OpKind::Concat,
            Op::Add { .. } => OpKind::Add,
            Op::PixelShuffle { .. } => OpKind::PixelShuffle,
            Op::L1Loss { .. } => OpKind::L1Loss,
            Op::MseLoss { .. } => OpKind::MseLoss,
            Op::Project { .. } => OpKind::Project,
        })
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor4<T>,
}

/// Gradients of leaf inputs produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: BTreeMap<usize, Tensor4<T>>,
    generation: u64,
}

impl<T> Gradients<T> {
    /// Gradient of the loss with respect to a leaf created by [`Tape::leaf`].
    /// `None` if the leaf did not influence the loss.
    pub fn wrt(&self, var: Var) -> Option<&Tensor4<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.leaves.get(&var.id)
    }
}

/// Operation recorder for one forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), generation: 0, fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the backward rule of one operation kind. Exists only so the
    /// gradient checker can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Discards all recorded nodes and invalidates outstanding [`Var`]s.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation += 1;
    }

    fn push(&mut self, op: Op<T>, value: Tensor4<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var { id: self.nodes.len() - 1, generation: self.generation }
    }

    fn node(&self, var: Var) -> Result<usize> {
        if var.generation != self.generation || var.id >= self.nodes.len() {
            return Err(Error::usage("variable does not belong to the current tape pass"));
        }
        Ok(var.id)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor4<T>> {
        Ok(&self.nodes[self.node(var)?].value)
    }

    /// Records an input tensor. Its gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor4<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Stride-1 cross-correlation with zero "same" padding and a learned bias.
    ///
    /// `weight` must be `[cout, cin, k, k]` with `k` in `{1, 3}`; `bias` must be
    /// `[cout, 1, 1, 1]`.
    pub fn conv2d(&mut self, params: &ParamSet<T>, input: Var, weight: ParamId, bias: ParamId) -> Result<Var> {
        let i = self.node(input)?;
        let x = &self.nodes[i].value;
        let w = &params.get(weight).value;
        let b = &params.get(bias).value;
        let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
        if ws.h != ws.w || !(ws.h == 1 || ws.h == 3) {
            return Err(Error::dim("conv2d", "weight", alloc::format!("kernel must be 1x1 or 3x3, got {ws}")));
        }
        if xs.c != ws.c {
            return Err(Error::dim(
                "conv2d",
                "input",
                alloc::format!("input has {} channels, weight {} expects {}", xs.c, params.name(weight), ws.c),
            ));
        }
        if bs != Shape::new(ws.n, 1, 1, 1) {
            return Err(Error::dim("conv2d", "bias", alloc::format!("expected ({}, 1, 1, 1), got {bs}", ws.n)));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { op: "conv2d", operand: "input" });
        }
        let out = kernels::conv2d_forward(x, w, b);
        Ok(self.push(Op::Conv2d { input: i, weight, bias }, out))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let i = self.node(input)?;
        let out = self.nodes[i].value.map(|v| if v > T::zero() { v } else { T::zero() });
        Ok(self.push(Op::Relu { input: i }, out))
    }

    /// Concatenates along the channel axis, in the order given.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::usage("concat_channels of an empty list"));
        }
        let ids = inputs.iter().map(|&v| self.node(v)).collect::<Result<Vec<_>>>()?;
        let first = self.nodes[ids[0]].value.shape();
        let mut channels = 0;
        for &id in &ids {
            let s = self.nodes[id].value.shape();
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::dim("concat_channels", "inputs", alloc::format!("{s} vs {first}")));
            }
            channels += s.c;
        }
        let os = Shape::new(first.n, channels, first.h, first.w);
        let mut data = Vec::with_capacity(os.len());
        for n in 0..first.n {
            for &id in &ids {
                let t = &self.nodes[id].value;
                let item = t.shape().item();
                data.extend_from_slice(&t.data()[n * item..(n + 1) * item]);
            }
        }
        let out = Tensor4::from_vec(os, data)?;
        Ok(self.push(Op::Concat { inputs: ids }, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.node(a)?, self.node(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", "b", alloc::format!("{} vs {}", tb.shape(), ta.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor4::from_vec(ta.shape(), data)?;
        Ok(self.push(Op::Add { a: ia, b: ib }, out))
    }

    /// Depth-to-space rearrangement by factor `r`.
    pub fn pixel_shuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let i = self.node(input)?;
        let s = self.nodes[i].value.shape();
        if r == 0 || s.c % (r * r) != 0 {
            return Err(Error::dim(
                "pixel_shuffle",
                "input",
                alloc::format!("{} channels not divisible by r^2 = {}", s.c, r * r),
            ));
        }
        let out = kernels::pixel_shuffle(&self.nodes[i].value, r);
        Ok(self.push(Op::PixelShuffle { input: i, r }, out))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor4<T>) -> Result<Var> {
        let i = self.node(pred)?;
        let p = &self.nodes[i].value;
        if p.shape() != target.shape() {
            return Err(Error::dim("l1_loss", "target", alloc::format!("{} vs {}", target.shape(), p.shape())));
        }
        let sum: f64 = p.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs().as_f64()).sum();
        let loss = T::from_f64(sum / p.shape().len() as f64);
        Ok(self.push(Op::L1Loss { pred: i, target: target.clone() }, Tensor4::scalar(loss)))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor4<T>) -> Result<Var> {
        let i = self.node(pred)?;
        let p = &self.nodes[i].value;
        if p.shape() != target.shape() {
            return Err(Error::dim("mse_loss", "target", alloc::format!("{} vs {}", target.shape(), p.shape())));
        }
        let sum: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = (a - b).as_f64();
                d * d
            })
            .sum();
        let loss = T::from_f64(sum / p.shape().len() as f64);
        Ok(self.push(Op::MseLoss { pred: i, target: target.clone() }, Tensor4::scalar(loss)))
    }

    /// Scalar projection `sum(input * weights)`.
    pub fn project(&mut self, input: Var, weights: &Tensor4<T>) -> Result<Var> {
        let i = self.node(input)?;
        let x = &self.nodes[i].value;
        if x.shape() != weights.shape() {
            return Err(Error::dim("project", "weights", alloc::format!("{} vs {}", weights.shape(), x.shape())));
        }
        let mut acc = T::zero();
        for (&a, &b) in x.data().iter().zip(weights.data()) {
            acc += a * b;
        }
        Ok(self.push(Op::Project { input: i, weights: weights.clone() }, Tensor4::scalar(acc)))
    }

    /// Fingerprint of the branch decisions recorded so far: the sign pattern
    /// of every ReLU input and of every L1 residual. Two passes with equal
    /// fingerprints evaluate the same smooth piece of the graph.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.nodes[*input].value.data() {
                        mix((v > T::zero()) as u64);
                    }
                }
                Op::L1Loss { pred, target } => {
                    for (&a, &b) in self.nodes[*pred].value.data().iter().zip(target.data()) {
                        mix(if a > b { 2 } else if a < b { 1 } else { 0 });
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Propagates d(loss)/d(node) from `loss` back to every parameter and leaf.
    ///
    /// Parameter gradients are accumulated into `params`. Leaf gradients are
    /// returned. The tape is cleared afterwards, so a second call without a new
    /// forward pass is an error.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward called without a recorded forward pass"));
        }
        let root = self.node(loss)?;
        if self.nodes[root].value.shape() != Shape::scalar() {
            return Err(Error::usage(alloc::format!(
                "backward requires a scalar loss, got shape {}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor4::scalar(T::one()));
        let mut leaves = BTreeMap::new();

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let corrupt = self.nodes[id].op.kind().is_some() && self.nodes[id].op.kind() == self.fault;
            match &self.nodes[id].op {
                Op::Leaf => {
                    leaves.insert(id, g);
                }
                Op::Conv2d { input, weight, bias } => {
                    let x = &self.nodes[*input].value;
                    let w = params.get(*weight).value.clone();
                    let mut gi = kernels::conv2d_backward_input(&g, &w, x.shape());
                    {
                        let mut gw = core::mem::replace(&mut params.get_mut(*weight).grad, Tensor4::scalar(T::zero()));
                        let mut gb = core::mem::replace(&mut params.get_mut(*bias).grad, Tensor4::scalar(T::zero()));
                        kernels::conv2d_backward_params(&g, x, &mut gw, &mut gb);
                        params.get_mut(*weight).grad = gw;
                        params.get_mut(*bias).grad = gb;
                    }
                    if corrupt {
                        perturb(&mut gi);
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Relu { input } => {
                    let x = &self.nodes[*input].value;
                    let data = x.data().iter().zip(g.data()).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() });
                    let mut gi = Tensor4::from_vec(x.shape(), data.collect())?;
                    if corrupt {
                        perturb(&mut gi);
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for &inp in inputs {
                        let c = self.nodes[inp].value.shape().c;
                        let mut gi = g.slice_channels(offset, c)?;
                        if corrupt {
                            perturb(&mut gi);
                        }
                        accumulate(&mut grads, inp, gi);
                        offset += c;
                    }
                }
                Op::Add { a, b } => {
                    let mut ga = g.clone();
                    if corrupt {
                        perturb(&mut ga);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, g);
                }
                Op::PixelShuffle { input, r } => {
                    let mut gi = kernels::pixel_unshuffle(&g, *r);
                    if corrupt {
                        perturb(&mut gi);
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::L1Loss { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let scale = g.data()[0] / T::from_f64(p.shape().len() as f64);
                    let data = p.data().iter().zip(target.data()).map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::zero()
                        }
                    });
                    let mut gi = Tensor4::from_vec(p.shape(), data.collect())?;
                    if corrupt {
                        perturb(&mut gi);
                    }
                    accumulate(&mut grads, *pred, gi);
                }
                Op::MseLoss { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let scale = T::from_f64(2.0) * g.data()[0] / T::from_f64(p.shape().len() as f64);
                    let data = p.data().iter().zip(target.data()).map(|(&a, &b)| scale * (a - b));
                    let mut gi = Tensor4::from_vec(p.shape(), data.collect())?;
                    if corrupt {
                        perturb(&mut gi);
                    }
                    accumulate(&mut grads, *pred, gi);
                }
                Op::Project { input, weights } => {
                    let s = g.data()[0];
                    let mut gi = weights.map(|w| w * s);
                    if corrupt {
                        perturb(&mut gi);
                    }
                    accumulate(&mut grads, *input, gi);
                }
            }
        }
        let generation = self.generation;
        self.clear();
        Ok(Gradients { leaves, generation })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor4<T>>], id: usize, g: Tensor4<T>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, &v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn perturb<T: Real>(g: &mut Tensor4<T>) {
    let k = T::from_f64(1.5);
    g.data_mut().iter_mut().for_each(|v| *v = *v * k + T::from_f64(1e-3));
}
