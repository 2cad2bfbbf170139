//! Separable linear maps on image planes.
//!
//! A [`Separable`] applies one sparse 1-D operator along the rows and one
//! along the columns of every `(n, c)` plane: `Y = R · X · Cᵀ`. Box and
//! Gaussian blurs, Sobel components, and all resampling kernels used by the
//! crate are instances. The adjoint `X̄ = Rᵀ · Ȳ · C` is exact, which is what
//! the reverse sweep uses.

use std::sync::Arc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Sparse `out_len × in_len` matrix stored as per-output tap lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis1d {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

impl Axis1d {
    pub fn from_taps(in_len: usize, taps: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(taps.iter().flatten().all(|&(i, _)| i < in_len));
        Axis1d { in_len, taps }
    }

    pub fn identity(len: usize) -> Self {
        Self::from_taps(len, (0..len).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[Vec<(usize, f64)>] {
        &self.taps
    }

    /// Same-size correlation with `kernel` (odd length, centred), replicate
    /// border.
    pub fn correlate_replicate(len: usize, kernel: &[f64]) -> Self {
        assert!(kernel.len() % 2 == 1, "kernel length must be odd");
        let r = (kernel.len() / 2) as isize;
        let taps = (0..len as isize)
            .map(|i| {
                kernel
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k != 0.0)
                    .map(|(j, &k)| (clamp_index(i + j as isize - r, len), k))
                    .collect()
            })
            .collect();
        Self::from_taps(len, taps)
    }

    /// Correlation restricted to positions where the whole kernel fits.
    pub fn correlate_valid(len: usize, kernel: &[f64]) -> Self {
        let k = kernel.len();
        let out = (len + 1).saturating_sub(k);
        let taps = (0..out)
            .map(|i| kernel.iter().enumerate().map(|(j, &v)| (i + j, v)).collect())
            .collect();
        Self::from_taps(len, taps)
    }

    /// Mean over a `2·radius+1` window with replicate border.
    pub fn box_mean(len: usize, radius: usize) -> Self {
        let k = 2 * radius + 1;
        Self::correlate_replicate(len, &vec![1.0 / k as f64; k])
    }

    /// Normalised Gaussian window with replicate border.
    pub fn gaussian(len: usize, sigma: f64, radius: usize) -> Self {
        Self::correlate_replicate(len, &gaussian_kernel(sigma, radius))
    }

    /// Keeps every `factor`-th sample starting at `offset`.
    pub fn decimate(len: usize, factor: usize, offset: usize) -> Self {
        let out = len / factor;
        Self::from_taps(len, (0..out).map(|i| vec![(i * factor + offset, 1.0)]).collect())
    }

    /// Non-overlapping block average (box prefilter, then decimation).
    pub fn area_down(len: usize, factor: usize) -> Self {
        let out = len / factor;
        let w = 1.0 / factor as f64;
        Self::from_taps(
            len,
            (0..out)
                .map(|i| (0..factor).map(|j| (i * factor + j, w)).collect())
                .collect(),
        )
    }

    /// Interpolates `in_len` samples onto `out_len` pixel centres with
    /// half-pixel alignment and replicate border.
    pub fn interpolate(in_len: usize, out_len: usize, kernel: Interpolation) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let taps = (0..out_len)
            .map(|i| {
                let src = (i as f64 + 0.5) * scale - 0.5;
                let mut t: Vec<(usize, f64)> = Vec::new();
                let mut push = |idx: isize, w: f64| {
                    if w == 0.0 {
                        return;
                    }
                    let idx = clamp_index(idx, in_len);
                    match t.iter_mut().find(|(j, _)| *j == idx) {
                        Some(e) => e.1 += w,
                        None => t.push((idx, w)),
                    }
                };
                match kernel {
                    Interpolation::Nearest => push(src.round() as isize, 1.0),
                    Interpolation::Bilinear => {
                        let f = src.floor();
                        let frac = src - f;
                        push(f as isize, 1.0 - frac);
                        push(f as isize + 1, frac);
                    }
                    Interpolation::Bicubic => {
                        let f = src.floor();
                        let frac = src - f;
                        for k in -1..=2isize {
                            push(f as isize + k, cubic_weight(frac - k as f64));
                        }
                    }
                }
                t
            })
            .collect();
        Self::from_taps(in_len, taps)
    }

    pub fn transpose(&self) -> Self {
        let mut taps = vec![Vec::new(); self.in_len];
        for (o, row) in self.taps.iter().enumerate() {
            for &(i, w) in row {
                taps[i].push((o, w));
            }
        }
        Axis1d {
            in_len: self.taps.len(),
            taps,
        }
    }

    /// Dense matrix, row-major `out_len × in_len`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.out_len() * self.in_len];
        for (o, row) in self.taps.iter().enumerate() {
            for &(i, w) in row {
                m[o * self.in_len + i] += w;
            }
        }
        m
    }
}

/// Interpolation kernel used by [`Axis1d::interpolate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bilinear,
    Bicubic,
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Sampled Gaussian of the given radius, normalised to unit sum.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// `Y = R · X · Cᵀ` on every plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Separable {
    pub rows: Axis1d,
    pub cols: Axis1d,
}

impl Separable {
    pub fn new(rows: Axis1d, cols: Axis1d) -> Arc<Self> {
        Arc::new(Separable { rows, cols })
    }

    pub fn box_mean(h: usize, w: usize, radius: usize) -> Arc<Self> {
        Self::new(Axis1d::box_mean(h, radius), Axis1d::box_mean(w, radius))
    }

    pub fn gaussian(h: usize, w: usize, sigma: f64, radius: usize) -> Arc<Self> {
        Self::new(Axis1d::gaussian(h, sigma, radius), Axis1d::gaussian(w, sigma, radius))
    }

    pub fn adjoint(&self) -> Self {
        Separable {
            rows: self.rows.transpose(),
            cols: self.cols.transpose(),
        }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.rows.out_len(), self.cols.out_len())
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.h != self.rows.in_len() || s.w != self.cols.in_len() {
            return Err(Error::shape(
                "separable",
                format!("planes of {}x{}", self.rows.in_len(), self.cols.in_len()),
                s,
            ));
        }
        let (oh, ow) = self.out_hw();
        let out_shape = s.with_hw(oh, ow);
        let rows: Vec<Vec<(usize, T)>> = cast_taps(&self.rows);
        let cols: Vec<Vec<(usize, T)>> = cast_taps(&self.cols);
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut tmp = vec![T::zero(); s.h * ow];
        for n in 0..s.n {
            for c in 0..s.c {
                let src = x.plane(n, c);
                for y in 0..s.h {
                    let row = &src[y * s.w..(y + 1) * s.w];
                    for (ox, taps) in cols.iter().enumerate() {
                        let mut acc = T::zero();
                        for &(i, k) in taps {
                            acc += k * row[i];
                        }
                        tmp[y * ow + ox] = acc;
                    }
                }
                for taps in &rows {
                    let start = out.len();
                    out.resize(start + ow, T::zero());
                    let dst = &mut out[start..];
                    for &(i, k) in taps {
                        let r = &tmp[i * ow..(i + 1) * ow];
                        for (d, &v) in dst.iter_mut().zip(r) {
                            *d += k * v;
                        }
                    }
                }
            }
        }
        Tensor::new(out_shape, out)
    }
}

fn cast_taps<T: Scalar>(a: &Axis1d) -> Vec<Vec<(usize, T)>> {
    a.taps()
        .iter()
        .map(|row| row.iter().map(|&(i, w)| (i, T::of(w))).collect())
        .collect()
}
