//! Training pairs, aligned patch crops and shuffled batches.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::resample::{bicubic_downsample, crop_to_multiple};
use crate::tensor::{Shape, Tensor4};

/// A ground-truth image and its bicubic degradation.
#[derive(Clone, Debug)]
pub struct ImagePair<T> {
    pub hr: Tensor4<T>,
    pub lr: Tensor4<T>,
    pub scale: usize,
    pub source: String,
}

impl<T: Real> ImagePair<T> {
    /// Centre-crops `hr` to a multiple of `scale` and degrades it.
    pub fn from_hr(hr: &Tensor4<T>, scale: usize, source: impl Into<String>) -> Result<Self> {
        if hr.shape().n != 1 {
            return Err(Error::usage("image pairs hold a single image"));
        }
        let hr = crop_to_multiple(hr, scale)?;
        let lr = bicubic_downsample(&hr, scale)?;
        Ok(ImagePair { hr, lr, scale, source: source.into() })
    }
}

/// One aligned low/high-resolution crop. `origin` is the LR offset `(y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub lr: Tensor4<T>,
    pub hr: Tensor4<T>,
    pub origin: (usize, usize),
}

/// Draws `count` uniformly placed crops of side `patch_lr` (LR space) and the
/// matching `scale * patch_lr` HR crops.
pub fn extract_patches<T: Real, R: Rng>(
    pair: &ImagePair<T>,
    patch_lr: usize,
    count: usize,
    augment: bool,
    rng: &mut R,
) -> Result<Vec<Patch<T>>> {
    let ls = pair.lr.shape();
    if patch_lr == 0 || patch_lr > ls.h || patch_lr > ls.w {
        return Err(Error::usage(alloc::format!(
            "patch {patch_lr} does not fit LR image {}x{} of {}",
            ls.h,
            ls.w,
            pair.source
        )));
    }
    let r = pair.scale;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let y = rng.random_range(0..=ls.h - patch_lr);
        let x = rng.random_range(0..=ls.w - patch_lr);
        let mut lr = pair.lr.crop(y, x, patch_lr, patch_lr)?;
        let mut hr = pair.hr.crop(r * y, r * x, r * patch_lr, r * patch_lr)?;
        if augment {
            let mode: u8 = rng.random_range(0..8);
            lr = dihedral(&lr, mode);
            hr = dihedral(&hr, mode);
        }
        out.push(Patch { lr, hr, origin: (y, x) });
    }
    Ok(out)
}

/// One of the eight flips/transposes of a square plane set.
/// Bit 0 flips columns, bit 1 flips rows, bit 2 transposes.
pub fn dihedral<T: Real>(t: &Tensor4<T>, mode: u8) -> Tensor4<T> {
    let s = t.shape();
    debug_assert_eq!(s.h, s.w);
    let side = s.h;
    Tensor4::from_fn(s, |n, c, y, x| {
        let (mut sy, mut sx) = if mode & 4 != 0 { (x, y) } else { (y, x) };
        if mode & 1 != 0 {
            sx = side - 1 - sx;
        }
        if mode & 2 != 0 {
            sy = side - 1 - sy;
        }
        t.get(n, c, sy, sx)
    })
    .expect("same shape")
}

/// A stacked mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub lr: Tensor4<T>,
    pub hr: Tensor4<T>,
    /// Indices into the patch list, in stacking order.
    pub members: Vec<usize>,
}

/// Shuffled batching. The final batch keeps the remainder.
pub struct Batches<'a, T> {
    patches: &'a [Patch<T>],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a, T: Real> Batches<'a, T> {
    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl<'a, T: Real> Iterator for Batches<'a, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let members = self.order[self.pos..end].to_vec();
        self.pos = end;
        let lr: Vec<&Tensor4<T>> = members.iter().map(|&i| &self.patches[i].lr).collect();
        let hr: Vec<&Tensor4<T>> = members.iter().map(|&i| &self.patches[i].hr).collect();
        Some(Batch {
            lr: Tensor4::stack(&lr).expect("shapes checked in make_batches"),
            hr: Tensor4::stack(&hr).expect("shapes checked in make_batches"),
            members,
        })
    }
}

/// Shuffles patch indices with `rng` and groups them into batches.
pub fn make_batches<'a, T: Real, R: Rng>(
    patches: &'a [Patch<T>],
    batch_size: usize,
    rng: &mut R,
) -> Result<Batches<'a, T>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    if let Some(first) = patches.first() {
        let (ls, hs) = (first.lr.shape(), first.hr.shape());
        let same = |a: Shape, b: Shape| (a.c, a.h, a.w) == (b.c, b.h, b.w) && a.n == 1;
        if let Some(bad) = patches.iter().position(|p| !same(p.lr.shape(), ls) || !same(p.hr.shape(), hs)) {
            return Err(Error::dim("make_batches", "patches", alloc::format!("patch {bad} differs in shape")));
        }
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(rng);
    Ok(Batches { patches, order, batch_size, pos: 0 })
}
