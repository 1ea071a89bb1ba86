//! PSNR and SSIM, plus per-dataset aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::model::Rdn;
use crate::real::Real;
use crate::tensor::{Shape, Tensor4};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(op: &'static str, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, "gt", alloc::format!("{} vs {}", b.shape(), a.shape())));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)` over all elements; [`PSNR_CAP_DB`] when MSE is zero.
pub fn psnr<T: Real>(pred: &Tensor4<T>, gt: &Tensor4<T>, peak: f64) -> Result<f64> {
    same_shape("psnr", pred, gt)?;
    if !(peak > 0.0) {
        return Err(Error::usage("psnr peak must be positive"));
    }
    let mut sum = 0.0;
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let d = a.as_f64() - b.as_f64();
        sum += d * d;
    }
    let mse = sum / pred.shape().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = alloc::vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(a, a), h, w, &k);
    let bb = filter_valid(&prod(b, b), h, w, &k);
    let ab = filter_valid(&prod(a, b), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, computed on the valid region of each channel and averaged
/// over channels. Single images only.
pub fn ssim<T: Real>(pred: &Tensor4<T>, gt: &Tensor4<T>, peak: f64) -> Result<f64> {
    same_shape("ssim", pred, gt)?;
    let s = pred.shape();
    if s.n != 1 {
        return Err(Error::usage("ssim takes a single image"));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::usage(alloc::format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            s.h,
            s.w
        )));
    }
    let mut total = 0.0;
    for c in 0..s.c {
        let range = s.index(0, c, 0, 0)..s.index(0, c, 0, 0) + s.plane();
        let a: Vec<f64> = pred.data()[range.clone()].iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = gt.data()[range].iter().map(|v| v.as_f64()).collect();
        total += ssim_plane(&a, &b, s.h, s.w, peak);
    }
    Ok(total / s.c as f64)
}

/// Optional preprocessing applied before both metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricOptions {
    /// Pixels removed from each border.
    pub shave: usize,
    /// Compare BT.601 luma (`0.299 R + 0.587 G + 0.114 B`) instead of RGB.
    pub luma_only: bool,
}

impl MetricOptions {
    pub fn prepare<T: Real>(&self, img: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s = img.shape();
        let mut out = if self.shave > 0 {
            if s.h <= 2 * self.shave || s.w <= 2 * self.shave {
                return Err(Error::usage(alloc::format!("cannot shave {} from {}x{}", self.shave, s.h, s.w)));
            }
            img.crop(self.shave, self.shave, s.h - 2 * self.shave, s.w - 2 * self.shave)?
        } else {
            img.clone()
        };
        if self.luma_only {
            let s = out.shape();
            if s.c != 3 {
                return Err(Error::dim("luma", "img", alloc::format!("expected 3 channels, got {}", s.c)));
            }
            let src = out;
            out = Tensor4::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
                let v = 0.299 * src.get(n, 0, y, x).as_f64()
                    + 0.587 * src.get(n, 1, y, x).as_f64()
                    + 0.114 * src.get(n, 2, y, x).as_f64();
                T::from_f64(v)
            })?;
        }
        Ok(out)
    }
}

/// Metrics for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub path: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics for one dataset at one scale, plus their means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub scale: usize,
    pub label: String,
    pub rows: Vec<MetricRow>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn new(dataset: impl Into<String>, scale: usize, label: impl Into<String>, rows: Vec<MetricRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr_db = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        MetricReport { dataset: dataset.into(), scale, label: label.into(), rows, mean_psnr_db, mean_ssim }
    }
}

/// Scores one prediction against its ground truth with peak 1.
pub fn score<T: Real>(pred: &Tensor4<T>, gt: &Tensor4<T>, options: &MetricOptions) -> Result<(f64, f64)> {
    let p = options.prepare(pred)?;
    let g = options.prepare(gt)?;
    Ok((psnr(&p, &g, 1.0)?, ssim(&p, &g, 1.0)?))
}

/// Runs the model on every pair's LR image and scores the clamped output
/// against the HR image. Consecutive pairs of equal LR size are batched, up
/// to `batch_eval` at a time. Rows keep the input order.
pub fn evaluate_pairs<T: Real>(
    model: &Rdn<T>,
    pairs: &[ImagePair<T>],
    batch_eval: usize,
    options: &MetricOptions,
) -> Result<Vec<MetricRow>> {
    let batch_eval = batch_eval.max(1);
    let mut rows = Vec::with_capacity(pairs.len());
    let mut start = 0;
    while start < pairs.len() {
        let shape = pairs[start].lr.shape();
        let mut end = start + 1;
        while end < pairs.len() && end - start < batch_eval && pairs[end].lr.shape() == shape {
            end += 1;
        }
        let group = &pairs[start..end];
        let lr: Vec<&Tensor4<T>> = group.iter().map(|p| &p.lr).collect();
        let pred = model.predict(&Tensor4::stack(&lr)?)?;
        for (k, pair) in group.iter().enumerate() {
            let out = pred.item(k).map(|v| v.max(T::zero()).min(T::one()));
            let (psnr_db, ssim) = score(&out, &pair.hr, options)?;
            rows.push(MetricRow { path: pair.source.clone(), psnr_db, ssim });
        }
        start = end;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(shape: Shape, seed: u64, amp: f64) -> Tensor4<f64> {
        let mut s = seed;
        Tensor4::from_fn(shape, |_, _, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            amp * ((s >> 11) as f64 / (1u64 << 53) as f64)
        })
        .unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = noise(Shape::new(1, 3, 8, 8), 1, 1.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let zeros = Tensor4::zeros(Shape::new(1, 3, 4, 4)).unwrap();
        let ones = Tensor4::full(Shape::new(1, 3, 4, 4), 1.0).unwrap();
        assert_eq!(psnr(&ones, &zeros, 1.0).unwrap(), 0.0);
        assert!(psnr(&a, &zeros, 1.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = noise(Shape::new(1, 3, 16, 16), 2, 0.8).map(|v| v + 0.1);
        let n = noise(Shape::new(1, 3, 16, 16), 3, 1.0).map(|v| v - 0.5);
        let mut prev = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05] {
            let noisy = Tensor4::from_vec(
                base.shape(),
                base.data().iter().zip(n.data()).map(|(b, e)| b + amp * e).collect(),
            )
            .unwrap();
            let p = psnr(&noisy, &base, 1.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise(Shape::new(1, 3, 20, 17), 4, 1.0);
        let b = noise(Shape::new(1, 3, 20, 17), 5, 1.0);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        let neg = a.map(|v| 1.0 - v);
        let anti = ssim(&a, &neg, 1.0).unwrap();
        assert!((-1.0..0.0).contains(&anti));
    }

    #[test]
    fn ssim_rejects_small_and_batched() {
        let small = Tensor4::<f64>::zeros(Shape::new(1, 3, 10, 30)).unwrap();
        assert!(matches!(ssim(&small, &small, 1.0), Err(Error::Usage(_))));
        let batched = Tensor4::<f64>::zeros(Shape::new(2, 3, 12, 12)).unwrap();
        assert!(matches!(ssim(&batched, &batched, 1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn options_shave_and_luma() {
        let img = noise(Shape::new(1, 3, 20, 20), 6, 1.0);
        let o = MetricOptions { shave: 4, luma_only: true };
        let p = o.prepare(&img).unwrap();
        assert_eq!(p.shape(), Shape::new(1, 1, 12, 12));
        let expect = 0.299 * img.get(0, 0, 4, 4) + 0.587 * img.get(0, 1, 4, 4) + 0.114 * img.get(0, 2, 4, 4);
        assert!((p.get(0, 0, 0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn report_means() {
        let rows = alloc::vec![
            MetricRow { path: "a".into(), psnr_db: 30.0, ssim: 0.9 },
            MetricRow { path: "b".into(), psnr_db: 20.0, ssim: 0.7 },
        ];
        let r = MetricReport::new("set", 2, "baseline", rows);
        assert_eq!(r.mean_psnr_db, 25.0);
        assert!((r.mean_ssim - 0.8).abs() < 1e-15);
    }
}
