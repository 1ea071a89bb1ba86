//! Raw numeric kernels behind the tape operations.
//!
//! Convolutions are stride-1 cross-correlations with zero "same" padding.
//! Every kernel accumulates in a fixed loop order, so results are bitwise
//! reproducible for identical inputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::{Shape, Tensor4};

/// Output pixels handled per im2col band; bounds scratch memory on large images.
const BAND_PIXELS: usize = 4096;

/// Lanes of the fixed-order partial sums in [`dot`].
const LANES: usize = 8;

/// Column range `[x0, x1)` of output positions whose source column
/// `x + kx - pad` lies inside `[0, width)`.
#[inline]
fn valid_range(width: usize, k_off: usize, pad: usize) -> (usize, usize) {
    let x0 = pad.saturating_sub(k_off);
    let x1 = (width + pad).saturating_sub(k_off).min(width);
    (x0, x1.max(x0))
}

/// Dot product with `LANES` independent accumulators, reduced in a fixed order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let split = n - n % LANES;
    for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in split..n {
        tail += a[i] * b[i];
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    total + tail
}

/// `C[m][..p] += A[m][..] * B` where `A` is `m x kd` row-major, `B` rows have
/// stride `ldb`, and `C` rows have stride `ldc`. Four rows of `C` at a time.
fn gemm_acc<T: Real>(m: usize, kd: usize, p: usize, a: &[T], b: &[T], ldb: usize, c: &mut [T], ldc: usize) {
    let mut row = 0;
    while row + 4 <= m {
        let (c0, rest) = c[row * ldc..].split_at_mut(ldc);
        let (c1, rest) = rest.split_at_mut(ldc);
        let (c2, rest) = rest.split_at_mut(ldc);
        let c3 = &mut rest[..p];
        let (c0, c1, c2) = (&mut c0[..p], &mut c1[..p], &mut c2[..p]);
        for kk in 0..kd {
            let a0 = a[row * kd + kk];
            let a1 = a[(row + 1) * kd + kk];
            let a2 = a[(row + 2) * kd + kk];
            let a3 = a[(row + 3) * kd + kk];
            let br = &b[kk * ldb..kk * ldb + p];
            for i in 0..p {
                let v = br[i];
                c0[i] += a0 * v;
                c1[i] += a1 * v;
                c2[i] += a2 * v;
                c3[i] += a3 * v;
            }
        }
        row += 4;
    }
    for r in row..m {
        let cr = &mut c[r * ldc..r * ldc + p];
        for kk in 0..kd {
            let av = a[r * kd + kk];
            if av == T::zero() {
                continue;
            }
            let br = &b[kk * ldb..kk * ldb + p];
            for (d, &v) in cr.iter_mut().zip(br) {
                *d += av * v;
            }
        }
    }
}

/// Unfolds rows `[y0, y1)` of a `[cin, h, w]` block into `col`, laid out as
/// `[cin * k * k, (y1 - y0) * w]`. Out-of-image taps are zero.
fn im2col<T: Real>(input: &[T], cin: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, col: &mut [T]) {
    let pad = (k - 1) / 2;
    let p = (y1 - y0) * w;
    for ci in 0..cin {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                let (x0, x1) = valid_range(w, kx, pad);
                for y in y0..y1 {
                    let drow = &mut dst[(y - y0) * w..(y - y0 + 1) * w];
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let iy = iy as usize;
                    drow[..x0].fill(T::zero());
                    drow[x1..].fill(T::zero());
                    drow[x0..x1].copy_from_slice(&plane[iy * w + x0 + kx - pad..iy * w + x1 + kx - pad]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back into a `[cin, h, w]` block.
fn col2im_acc<T: Real>(col: &[T], cin: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, out: &mut [T]) {
    let pad = (k - 1) / 2;
    let p = (y1 - y0) * w;
    for ci in 0..cin {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[((ci * k + ky) * k + kx) * p..][..p];
                let (x0, x1) = valid_range(w, kx, pad);
                for y in y0..y1 {
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let srow = &src[(y - y0) * w + x0..(y - y0) * w + x1];
                    let drow = &mut plane[iy * w + x0 + kx - pad..iy * w + x1 + kx - pad];
                    for (d, &s) in drow.iter_mut().zip(srow) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Row bands `[y0, y1)` covering `h` rows with at most `BAND_PIXELS` pixels each.
fn bands(h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (BAND_PIXELS / w).max(1);
    (0..h).step_by(rows).map(move |y0| (y0, (y0 + rows).min(h)))
}

/// `weight` is `[cout, cin, k, k]`, `bias` is `[cout, 1, 1, 1]`.
pub fn conv2d_forward<T: Real>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &Tensor4<T>) -> Tensor4<T> {
    let is = input.shape();
    let ws = weight.shape();
    let (cout, cin, k) = (ws.n, ws.c, ws.h);
    let (h, w) = (is.h, is.w);
    let plane = h * w;
    let kd = cin * k * k;
    let mut out = Tensor4::zeros(Shape::new(is.n, cout, h, w)).expect("non-empty shape");
    let inp = input.data();
    let wt = weight.data();
    let out_data = out.data_mut();
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kd * plane.min(BAND_PIXELS.max(w))] };
    for n in 0..is.n {
        let in_block = &inp[n * cin * plane..(n + 1) * cin * plane];
        let out_block = &mut out_data[n * cout * plane..(n + 1) * cout * plane];
        for co in 0..cout {
            out_block[co * plane..(co + 1) * plane].fill(bias.data()[co]);
        }
        if k == 1 {
            gemm_acc(cout, cin, plane, wt, in_block, plane, out_block, plane);
            continue;
        }
        for (y0, y1) in bands(h, w) {
            let p = (y1 - y0) * w;
            im2col(in_block, cin, h, w, k, y0, y1, &mut col);
            gemm_acc(cout, kd, p, wt, &col, p, &mut out_block[y0 * w..], plane);
        }
    }
    out
}

/// Transposes a `[rows, cols]` row-major matrix.
fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Gradient with respect to the convolution input.
pub fn conv2d_backward_input<T: Real>(grad_out: &Tensor4<T>, weight: &Tensor4<T>, input_shape: Shape) -> Tensor4<T> {
    let ws = weight.shape();
    let (cout, cin, k) = (ws.n, ws.c, ws.h);
    let (h, w) = (input_shape.h, input_shape.w);
    let plane = h * w;
    let kd = cin * k * k;
    let wt_t = transpose(weight.data(), cout, kd);
    let mut gin = Tensor4::zeros(input_shape).expect("non-empty shape");
    let go = grad_out.data();
    let gin_data = gin.data_mut();
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kd * plane.min(BAND_PIXELS.max(w))] };
    for n in 0..input_shape.n {
        let go_block = &go[n * cout * plane..(n + 1) * cout * plane];
        let gin_block = &mut gin_data[n * cin * plane..(n + 1) * cin * plane];
        if k == 1 {
            gemm_acc(cin, cout, plane, &wt_t, go_block, plane, gin_block, plane);
            continue;
        }
        for (y0, y1) in bands(h, w) {
            let p = (y1 - y0) * w;
            col[..kd * p].fill(T::zero());
            gemm_acc(kd, cout, p, &wt_t, &go_block[y0 * w..], plane, &mut col, p);
            col2im_acc(&col, cin, h, w, k, y0, y1, gin_block);
        }
    }
    gin
}

/// Accumulates weight and bias gradients into `grad_w` and `grad_b`.
pub fn conv2d_backward_params<T: Real>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    grad_w: &mut Tensor4<T>,
    grad_b: &mut Tensor4<T>,
) {
    let is = input.shape();
    let ws = grad_w.shape();
    let (cout, cin, k) = (ws.n, ws.c, ws.h);
    let (h, w) = (is.h, is.w);
    let plane = h * w;
    let kd = cin * k * k;
    let go = grad_out.data();
    let inp = input.data();
    let gw = grad_w.data_mut();
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kd * plane.min(BAND_PIXELS.max(w))] };
    for n in 0..is.n {
        let go_block = &go[n * cout * plane..(n + 1) * cout * plane];
        let in_block = &inp[n * cin * plane..(n + 1) * cin * plane];
        for (y0, y1) in bands(h, w) {
            let p = (y1 - y0) * w;
            let (src, stride) = if k == 1 {
                (&in_block[y0 * w..], plane)
            } else {
                im2col(in_block, cin, h, w, k, y0, y1, &mut col);
                (&col[..], p)
            };
            for co in 0..cout {
                let g = &go_block[co * plane + y0 * w..][..p];
                for kk in 0..kd {
                    gw[co * kd + kk] += dot(g, &src[kk * stride..kk * stride + p]);
                }
            }
        }
    }
    let gb = grad_b.data_mut();
    for co in 0..cout {
        let mut acc = T::zero();
        for n in 0..is.n {
            acc += go[(n * cout + co) * plane..][..plane].iter().copied().sum::<T>();
        }
        gb[co] += acc;
    }
}

/// Depth-to-space: `out(n, oc, r*y + dy, r*x + dx) = in(n, oc*r*r + dy*r + dx, y, x)`.
pub fn pixel_shuffle<T: Real>(input: &Tensor4<T>, r: usize) -> Tensor4<T> {
    let s = input.shape();
    let oc_count = s.c / (r * r);
    let os = Shape::new(s.n, oc_count, s.h * r, s.w * r);
    let mut out = Tensor4::zeros(os).expect("non-empty shape");
    let src = input.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        for oc in 0..oc_count {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = oc * r * r + dy * r + dx;
                    for y in 0..s.h {
                        let row = &src[s.index(n, ic, y, 0)..][..s.w];
                        let oy = r * y + dy;
                        for (x, &v) in row.iter().enumerate() {
                            dst[os.index(n, oc, oy, r * x + dx)] = v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Space-to-depth; exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(input: &Tensor4<T>, r: usize) -> Tensor4<T> {
    let s = input.shape();
    let os = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = Tensor4::zeros(os).expect("non-empty shape");
    let src = input.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        for oc in 0..s.c {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = oc * r * r + dy * r + dx;
                    for y in 0..os.h {
                        for x in 0..os.w {
                            dst[os.index(n, ic, y, x)] = src[s.index(n, oc, r * y + dy, r * x + dx)];
                        }
                    }
                }
            }
        }
    }
    out
}
