//! Bicubic degradation.
//!
//! Separable resampling with the Keys cubic (`a = -0.5`). When shrinking by an
//! integer factor `r` the kernel is stretched by `r` (antialiasing), so each
//! output sample averages over a `4r`-wide footprint. Source coordinates
//! outside the image are clamped to the border.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor4};

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps of one output sample: anchor index plus `(source index, weight)` pairs.
struct Taps {
    anchor: usize,
    taps: Vec<(usize, f64)>,
}

fn taps_1d(in_len: usize, out_len: usize, r: usize) -> Vec<Taps> {
    let scale = r as f64;
    let support = 2.0 * scale;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = num_traits::Float::floor(center - support) as isize;
            let hi = num_traits::Float::ceil(center + support) as isize;
            let mut taps = Vec::new();
            let mut total = 0.0;
            for j in lo..=hi {
                let w = keys((j as f64 - center) / scale);
                if w != 0.0 {
                    taps.push((j.clamp(0, last) as usize, w));
                    total += w;
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            let anchor = (num_traits::Float::round(center) as isize).clamp(0, last) as usize;
            Taps { anchor, taps }
        })
        .collect()
}

/// Evaluates `anchor + sum w (x - anchor)`; exact on constant rows because
/// every difference is exactly zero.
#[inline]
fn apply(t: &Taps, sample: impl Fn(usize) -> f64) -> f64 {
    let base = sample(t.anchor);
    let mut acc = 0.0;
    for &(j, w) in &t.taps {
        acc += w * (sample(j) - base);
    }
    base + acc
}

/// Downsamples every plane by the integer factor `r`; output clamped to `[0, 1]`.
pub fn bicubic_downsample<T: Real>(img: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = img.shape();
    if r == 0 {
        return Err(Error::usage("downsampling factor must be at least 1"));
    }
    if s.h % r != 0 || s.w % r != 0 {
        return Err(Error::usage(alloc::format!(
            "image {}x{} not divisible by {r}; crop first",
            s.h,
            s.w
        )));
    }
    let (oh, ow) = (s.h / r, s.w / r);
    let htaps = taps_1d(s.w, ow, r);
    let vtaps = taps_1d(s.h, oh, r);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut rows = alloc::vec![0.0f64; s.h * ow];
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = &img.data()[s.index(n, c, 0, 0)..][..s.plane()];
            for y in 0..s.h {
                let row = &plane[y * s.w..(y + 1) * s.w];
                for (x, t) in htaps.iter().enumerate() {
                    rows[y * ow + x] = apply(t, |j| row[j].as_f64());
                }
            }
            for t in &vtaps {
                for x in 0..ow {
                    let v = apply(t, |j| rows[j * ow + x]);
                    out.push(T::from_f64(v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    Tensor4::from_vec(out_shape, out)
}

/// Crops the centre of `img` so both spatial sizes are multiples of `r`.
pub fn crop_to_multiple<T: Real>(img: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = img.shape();
    if r == 0 || s.h < r || s.w < r {
        return Err(Error::usage(alloc::format!("image {}x{} smaller than scale {r}", s.h, s.w)));
    }
    let (h, w) = (s.h - s.h % r, s.w - s.w % r);
    if (h, w) == (s.h, s.w) {
        return Ok(img.clone());
    }
    img.crop((s.h - h) / 2, (s.w - w) / 2, h, w)
}
