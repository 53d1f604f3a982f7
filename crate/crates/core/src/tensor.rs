//! Dense NCHW tensors.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a 4-D tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one spatial plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    /// Same batch, height and width.
    pub fn same_grid(&self, other: &Shape) -> bool {
        self.n == other.n && self.h == other.h && self.w == other.w
    }

    pub(crate) fn expect_axis(&self, op: &'static str, axis: Axis, expected: usize) -> Result<()> {
        let got = match axis {
            Axis::Batch => self.n,
            Axis::Channels => self.c,
            Axis::Height => self.h,
            Axis::Width => self.w,
        };
        if got == expected {
            Ok(())
        } else {
            Err(Error::AxisMismatch { op, axis, expected, got })
        }
    }

    /// Checks batch/height/width agreement, reporting the first differing axis.
    pub(crate) fn expect_grid(&self, op: &'static str, other: &Shape) -> Result<()> {
        self.expect_axis(op, Axis::Batch, other.n)?;
        self.expect_axis(op, Axis::Height, other.h)?;
        self.expect_axis(op, Axis::Width, other.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array stored row-major with width fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::invalid("tensor", format!("all dims must be >= 1, got {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "tensor",
                format!("data length {} does not match shape {shape}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(shape.numel() > 0, "tensor dims must be >= 1, got {shape}");
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Tensor { shape, data }
    }

    pub fn normal<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            })
            .collect();
        Tensor { shape, data }
    }

    /// Horizontal pixel index of every element, broadcast over channels.
    pub fn grid_x(shape: Shape) -> Self {
        Self::from_fn(shape, |_, _, _, x| T::of(x as f64))
    }

    /// Vertical pixel index of every element, broadcast over channels.
    pub fn grid_y(shape: Shape) -> Self {
        Self::from_fn(shape, |_, _, y, _| T::of(y as f64))
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let i = self.shape.index(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous `h*w` plane of one (batch, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`, contiguous.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.c * self.shape.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts precision elementwise.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::of(v.as_f64())).collect() }
    }

    /// Channels `[start, start + len)` as a new tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.shape.c {
            return Err(Error::invalid(
                "channels",
                format!("range {start}..{} out of {} channels", start + len, self.shape.c),
            ));
        }
        let out_shape = self.shape.with_channels(len);
        let p = self.shape.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..self.shape.n {
            let base = (n * self.shape.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Stacks tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let base = first.shape;
        for p in parts.iter().skip(1) {
            p.shape.expect_grid("concat_channels", &base)?;
        }
        let c: usize = parts.iter().map(|p| p.shape.c).sum();
        let out_shape = base.with_channels(c);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..base.n {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Mirrors rows top to bottom.
    pub fn flip_vertical(&self) -> Self {
        let s = self.shape;
        Self::from_fn(s, |n, c, y, x| self.at(n, c, s.h - 1 - y, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims_and_bad_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn channel_slicing_and_concat_are_inverse() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 5, 3, 4), |n, c, y, x| {
            (n * 1000 + c * 100 + y * 10 + x) as f64
        });
        let a = t.channels(0, 2).unwrap();
        let b = t.channels(2, 3).unwrap();
        assert_eq!(a.at(1, 1, 2, 3), 1123.0);
        assert_eq!(Tensor::concat_channels(&[&a, &b]).unwrap(), t);
    }

    #[test]
    fn concat_reports_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let b = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 5));
        let err = Tensor::concat_channels(&[&a, &b]).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn vertical_flip_is_involution() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 2, 3, 2), |_, c, y, x| (c * 6 + y * 2 + x) as f32);
        assert_eq!(t.flip_vertical().at(0, 1, 0, 1), t.at(0, 1, 2, 1));
        assert_eq!(t.flip_vertical().flip_vertical(), t);
    }
}
