use super::ImagePlane;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Histogram-contrast saliency, per plane.
///
/// Each plane is quantised to 256 levels over its own range, and every
/// pixel scores `Σ_i H(i)·|q − i|` against the plane's level histogram `H`.
pub fn saliency_map<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let levels = quantize(x.plane(n, c));
            let mut hist = [0u64; 256];
            for &q in &levels {
                hist[q] += 1;
            }
            let table: Vec<f64> = (0..256usize)
                .map(|k| {
                    hist.iter()
                        .enumerate()
                        .map(|(i, &h)| h as f64 * k.abs_diff(i) as f64)
                        .sum()
                })
                .collect();
            for (o, &q) in out.plane_mut(n, c).iter_mut().zip(&levels) {
                *o = T::of(table[q]);
            }
        }
    }
    out
}

fn quantize<T: Scalar>(plane: &[T]) -> Vec<usize> {
    let lo = plane.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    let hi = plane.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    if !(hi > lo) {
        return vec![0; plane.len()];
    }
    plane
        .iter()
        .map(|v| (((v.as_f64() - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as usize)
        .collect()
}

/// Nearest-rank percentile over every value of `x`.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Maps the `lo`-th percentile to 0 and the `hi`-th to 1, clipping outside.
/// A degenerate range yields a constant 0.5.
pub fn percentile_stretch<T: Scalar>(x: &Tensor<T>, lo: f64, hi: f64) -> Tensor<T> {
    let mut sorted: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
    sorted.sort_by(f64::total_cmp);
    let (a, b) = (percentile(&sorted, lo), percentile(&sorted, hi));
    if !(b > a) {
        return Tensor::full(x.shape(), T::of(0.5));
    }
    x.map(|v| T::of(((v.as_f64() - a) / (b - a)).clamp(0.0, 1.0)))
}

/// [`percentile_stretch`] with the 0.5% and 99.5% defaults, for images.
pub fn percentile_stretch_image(img: &ImagePlane) -> Result<ImagePlane> {
    ImagePlane::new(percentile_stretch(img.pixels(), 0.5, 99.5), img.colorspace())
}
