use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
///
/// `f32` is used for training and inference, `f64` for gradient checking.
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Four-dimensional extent `(n, c, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
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

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn planes(&self) -> usize {
        self.n * self.c
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub const fn with_n(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    pub const fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major `(n, c, h, w)` array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} elements for {shape}", shape.numel()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
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

    /// Builds a `(1, 1, h, w)` tensor from row-major values.
    pub fn from_plane(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Shape::new(1, 1, h, w), data)
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h·w` slice for batch item `n`, channel `c`.
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

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(op, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn expect_shape(&self, op: &'static str, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shapes(op, expected, self.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.numel().max(1) as f64)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape("dot", other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> T {
        self.data.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    /// Largest elementwise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Copies one channel into a `(n, 1, h, w)` tensor.
    pub fn channel(&self, c: usize) -> Self {
        let s = self.shape;
        let mut out = Tensor::zeros(s.with_c(1));
        for n in 0..s.n {
            out.plane_mut(n, 0).copy_from_slice(self.plane(n, c));
        }
        out
    }

    /// Copies one batch item into a `(1, c, h, w)` tensor.
    pub fn batch_item(&self, n: usize) -> Self {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor {
            shape: s.with_n(1),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_channels of zero tensors".into()))?
            .shape;
        let mut c = 0;
        for p in parts {
            let s = p.shape;
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(Error::shapes("concat_channels", first.with_c(s.c), s));
            }
            c += s.c;
        }
        let shape = first.with_c(c);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for p in parts {
                let len = p.shape.c * p.shape.plane();
                data.extend_from_slice(&p.data[n * len..(n + 1) * len]);
            }
        }
        Tensor::new(shape, data)
    }

    /// Concatenates along the batch axis.
    pub fn stack_batch(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack_batch of zero tensors".into()))?
            .shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.with_n(first.n) != first {
                return Err(Error::shapes("stack_batch", first.with_n(p.shape.n), p.shape));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(first.with_n(n), data)
    }

    /// Spatial crop `[y0, y0+h) × [x0, x0+w)` of every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if y0 + h > s.h || x0 + w > s.w {
            return Err(Error::shape(
                "crop",
                format!("window inside {}x{}", s.h, s.w),
                format!("[{y0}, {}) x [{x0}, {})", y0 + h, x0 + w),
            ));
        }
        Ok(Tensor::from_fn(s.with_hw(h, w), |n, c, y, x| {
            self.at(n, c, y0 + y, x0 + x)
        }))
    }

    /// Horizontal mirror of every plane.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.shape.w;
        Tensor::from_fn(self.shape, |n, c, y, x| self.at(n, c, y, w - 1 - x))
    }

    /// Spatial transpose of every plane.
    pub fn transpose_hw(&self) -> Self {
        let s = self.shape;
        Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| self.at(n, c, x, y))
    }
}

/// Weights `(q_out, q_in, s, s)` and optional bias of a same-padded,
/// stride-1 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> ConvFilter<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w || s.h.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "convolution kernels must be square with odd size, got {}x{}",
                s.h, s.w
            )));
        }
        if let Some(b) = &bias {
            b.expect_shape("ConvFilter::new bias", Shape::new(1, s.n, 1, 1))?;
        }
        Ok(ConvFilter { weight, bias })
    }

    pub fn zeros(q_out: usize, q_in: usize, size: usize, with_bias: bool) -> Result<Self> {
        Self::new(
            Tensor::zeros(Shape::new(q_out, q_in, size, size)),
            with_bias.then(|| Tensor::zeros(Shape::new(1, q_out, 1, 1))),
        )
    }

    pub fn q_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn q_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn size(&self) -> usize {
        self.weight.shape().h
    }

    /// Transposes the channel axes and rotates each kernel by 180°; bias is
    /// dropped.
    pub fn flip(&self) -> Self {
        let s = self.weight.shape();
        let k = s.h;
        let weight = Tensor::from_fn(Shape::new(s.c, s.n, k, k), |i, o, y, x| {
            self.weight.at(o, i, k - 1 - y, k - 1 - x)
        });
        ConvFilter { weight, bias: None }
    }

    pub fn scaled(&self, k: T) -> Self {
        ConvFilter {
            weight: self.weight.scale(k),
            bias: self.bias.as_ref().map(|b| b.scale(k)),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConvFilter<U> {
        ConvFilter {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Tensor::cast),
        }
    }
}

/// Rotates an `s×s` single kernel held in a filter; see [`ConvFilter::flip`].
pub fn flip_filter<T: Scalar>(f: &ConvFilter<T>) -> ConvFilter<T> {
    f.flip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn flip_of_scalar_kernel_is_identity() {
        let f = ConvFilter::new(Tensor::<f32>::ones(Shape::new(1, 1, 1, 1)), None).unwrap();
        assert_eq!(f.flip().weight.data(), &[1.0]);
    }

    #[test]
    fn flip_rotates_padded_2x2_kernel() {
        let w = Tensor::<f32>::from_plane(3, 3, vec![1., 2., 0., 3., 4., 0., 0., 0., 0.]).unwrap();
        let f = ConvFilter::new(w, None).unwrap().flip();
        assert_eq!(f.weight.data(), &[0., 0., 0., 0., 4., 3., 0., 2., 1.]);
    }

    #[test]
    fn flip_transposes_channels() {
        let w = Tensor::<f32>::from_fn(Shape::new(2, 3, 3, 3), |o, i, y, x| {
            (o * 100 + i * 10 + y * 3 + x) as f32
        });
        let f = ConvFilter::new(w.clone(), None).unwrap().flip();
        assert_eq!(f.weight.shape(), Shape::new(3, 2, 3, 3));
        assert_eq!(f.weight.at(2, 1, 0, 0), w.at(1, 2, 2, 2));
        assert_eq!(f.flip().weight, w);
    }

    #[test]
    fn even_kernels_are_rejected() {
        assert!(ConvFilter::<f32>::zeros(1, 1, 2, false).is_err());
    }

    #[test]
    fn concat_and_select_channels() {
        let a = Tensor::<f32>::full(Shape::new(2, 1, 2, 2), 1.0);
        let b = Tensor::<f32>::full(Shape::new(2, 2, 2, 2), 2.0);
        let c = Tensor::concat_channels(&[a.clone(), b]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 3, 2, 2));
        assert_eq!(c.channel(0), a);
        assert_eq!(c.at(1, 2, 1, 1), 2.0);
    }
}
