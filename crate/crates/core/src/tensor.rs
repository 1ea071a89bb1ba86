use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

/// Shape of a [`Tensor4`]: batch, channels, rows, columns.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one spatial plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense 4-D array in row-major `(n, c, h, w)` order.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Result<Self> {
        check_dims(shape)?;
        Ok(Tensor4 { shape, data: vec![value; shape.len()] })
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        check_dims(shape)?;
        if data.len() != shape.len() {
            return Err(Error::dim(
                "tensor",
                "data",
                alloc::format!("expected {} values for shape {shape}, got {}", shape.len(), data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Tensor4 { shape: Shape::scalar(), data: vec![value] }
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        check_dims(shape)?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Ok(Tensor4 { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Converts element precision.
    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    /// Copies batch item `i` into a standalone tensor with `n = 1`.
    pub fn item(&self, i: usize) -> Tensor4<T> {
        let len = self.shape.item();
        let shape = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        Tensor4 { shape, data: self.data[i * len..(i + 1) * len].to_vec() }
    }

    /// Stacks tensors that share `(c, h, w)` along the batch axis.
    pub fn stack(items: &[&Tensor4<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::usage("stack of empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::dim("stack", "items", alloc::format!("{} vs {}", t.shape, s)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Tensor4 { shape: Shape::new(n, s.c, s.h, s.w), data })
    }

    /// Copies the window `[y0, y0 + h) x [x0, x0 + w)` of every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || y0 + h > s.h || x0 + w > s.w {
            return Err(Error::usage(alloc::format!(
                "crop {h}x{w} at ({y0}, {x0}) outside {}x{}",
                s.h,
                s.w
            )));
        }
        let out = Shape::new(s.n, s.c, h, w);
        let mut data = Vec::with_capacity(out.len());
        for n in 0..s.n {
            for c in 0..s.c {
                for y in y0..y0 + h {
                    let start = s.index(n, c, y, x0);
                    data.extend_from_slice(&self.data[start..start + w]);
                }
            }
        }
        Ok(Tensor4 { shape: out, data })
    }

    /// Copies channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if count == 0 || start + count > s.c {
            return Err(Error::dim(
                "slice_channels",
                "range",
                alloc::format!("channels {start}..{} of {}", start + count, s.c),
            ));
        }
        let out = Shape::new(s.n, count, s.h, s.w);
        let plane = s.plane();
        let mut data = Vec::with_capacity(out.len());
        for n in 0..s.n {
            let base = s.index(n, start, 0, 0);
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor4 { shape: out, data })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor4").field("shape", &self.shape).field("head", &head).finish()
    }
}

fn check_dims(shape: Shape) -> Result<()> {
    if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
        return Err(Error::dim("tensor", "shape", alloc::format!("zero dimension in {shape}")));
    }
    Ok(())
}
