use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ImagePlane;
use crate::error::{Error, Result};
use crate::tensor::{Axis1d, Graph, Interpolation, Scalar, Separable, Tensor, Var};

pub const DEFAULT_BASE_RADIUS: usize = 15;
pub const DEFAULT_GUIDED_RADIUS: usize = 8;
pub const DEFAULT_GUIDED_EPS: f64 = 1e-2;
pub const DEFAULT_GUIDED_SUBSAMPLE: usize = 4;

/// Box mean over a `(2·radius+1)²` window, replicate border, per plane.
pub fn box_blur<T: Scalar>(x: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    Separable::box_mean(s.h, s.w, radius).apply(x)
}

/// Two-scale decomposition: `base = box_blur(x)`, `detail = x − base`.
pub fn base_detail_split<T: Scalar>(x: &Tensor<T>, radius: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if radius == 0 {
        return Err(Error::InvalidArgument("base/detail radius must be at least 1".into()));
    }
    let base = box_blur(x, radius)?;
    let detail = x.sub(&base)?;
    Ok((base, detail))
}

/// Horizontal and vertical 3×3 Sobel responses, replicate border.
pub fn sobel_gradients<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape();
    let smooth = [1.0, 2.0, 1.0];
    let diff = [-1.0, 0.0, 1.0];
    let gx = Separable::new(
        Axis1d::correlate_replicate(s.h, &smooth),
        Axis1d::correlate_replicate(s.w, &diff),
    );
    let gy = Separable::new(
        Axis1d::correlate_replicate(s.h, &diff),
        Axis1d::correlate_replicate(s.w, &smooth),
    );
    Ok((gx.apply(x)?, gy.apply(x)?))
}

fn check_pair<T: Scalar>(p: &Var<T>, guide: &Var<T>, op: &'static str) -> Result<()> {
    if p.shape() != guide.shape() {
        return Err(Error::shapes(op, guide.shape(), p.shape()));
    }
    Ok(())
}

fn coefficients<T: Scalar>(
    p: &Var<T>,
    guide: &Var<T>,
    radius: usize,
    eps: f64,
) -> Result<(Var<T>, Var<T>, Arc<Separable>)> {
    let s = p.shape();
    let mean = Separable::box_mean(s.h, s.w, radius);
    let mi = guide.separable(&mean)?;
    let mp = p.separable(&mean)?;
    let mip = guide.mul(p)?.separable(&mean)?;
    let mii = guide.square().separable(&mean)?;
    let var = mii.sub(&mi.square())?;
    let cov = mip.sub(&mi.mul(&mp)?)?;
    let a = cov.div(&var.offset(T::of(eps)))?;
    let b = mp.sub(&a.mul(&mi)?)?;
    Ok((a, b, mean))
}

/// Differentiable guided filter applied plane by plane.
pub fn guided_filter_var<T: Scalar>(p: &Var<T>, guide: &Var<T>, radius: usize, eps: f64) -> Result<Var<T>> {
    check_pair(p, guide, "guided_filter")?;
    let (a, b, mean) = coefficients(p, guide, radius, eps)?;
    a.separable(&mean)?.mul(guide)?.add(&b.separable(&mean)?)
}

/// `q = mean(a)·I + mean(b)` with per-window ridge regression coefficients
/// `a = cov(I, p)/(var(I) + eps)`, `b = mean(p) − a·mean(I)`.
pub fn guided_filter<T: Scalar>(p: &Tensor<T>, guide: &Tensor<T>, radius: usize, eps: f64) -> Result<Tensor<T>> {
    let g = Graph::new();
    let out = guided_filter_var(&g.constant(p.clone()), &g.constant(guide.clone()), radius, eps)?;
    Ok(out.value().clone())
}

/// Guided filter whose coefficients are estimated on a bilinearly
/// subsampled grid and bilinearly upsampled before being applied to the
/// full-resolution guide.
pub fn fast_guided_filter_var<T: Scalar>(
    p: &Var<T>,
    guide: &Var<T>,
    radius: usize,
    eps: f64,
    subsample: usize,
) -> Result<Var<T>> {
    check_pair(p, guide, "fast_guided_filter")?;
    if subsample == 0 {
        return Err(Error::InvalidArgument("subsample factor must be at least 1".into()));
    }
    if subsample == 1 {
        return guided_filter_var(p, guide, radius, eps);
    }
    let s = p.shape();
    let (hc, wc) = (s.h.div_ceil(subsample), s.w.div_ceil(subsample));
    let down = Separable::new(
        Axis1d::interpolate(s.h, hc, Interpolation::Bilinear),
        Axis1d::interpolate(s.w, wc, Interpolation::Bilinear),
    );
    let up = Separable::new(
        Axis1d::interpolate(hc, s.h, Interpolation::Bilinear),
        Axis1d::interpolate(wc, s.w, Interpolation::Bilinear),
    );
    let coarse_radius = (radius / subsample).max(radius.min(1));
    let (a, b, mean) = coefficients(&p.separable(&down)?, &guide.separable(&down)?, coarse_radius, eps)?;
    let a = a.separable(&mean)?.separable(&up)?;
    let b = b.separable(&mean)?.separable(&up)?;
    a.mul(guide)?.add(&b)
}

pub fn fast_guided_filter<T: Scalar>(
    p: &Tensor<T>,
    guide: &Tensor<T>,
    radius: usize,
    eps: f64,
    subsample: usize,
) -> Result<Tensor<T>> {
    let g = Graph::new();
    let out = fast_guided_filter_var(
        &g.constant(p.clone()),
        &g.constant(guide.clone()),
        radius,
        eps,
        subsample,
    )?;
    Ok(out.value().clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Integer-factor resampling. Upsampling interpolates with `mode`;
/// downsampling averages non-overlapping `factor × factor` blocks
/// regardless of `mode`.
pub fn resample<T: Scalar>(
    x: &Tensor<T>,
    factor: usize,
    mode: Interpolation,
    direction: Direction,
) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("resampling factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let s = x.shape();
    let op = match direction {
        Direction::Up => Separable::new(
            Axis1d::interpolate(s.h, s.h * factor, mode),
            Axis1d::interpolate(s.w, s.w * factor, mode),
        ),
        Direction::Down => {
            if !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
                return Err(Error::InvalidArgument(format!(
                    "{}x{} is not divisible by downsampling factor {factor}",
                    s.h, s.w
                )));
            }
            Separable::new(Axis1d::area_down(s.h, factor), Axis1d::area_down(s.w, factor))
        }
    };
    op.apply(x)
}

/// [`resample`] on an image, clamped back into `[0, 1]`.
pub fn resample_image(
    img: &ImagePlane,
    factor: usize,
    mode: Interpolation,
    direction: Direction,
) -> Result<ImagePlane> {
    ImagePlane::clamped(resample(img.pixels(), factor, mode, direction)?, img.colorspace())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Shape;

    fn random(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, _, _| rng.random_range(0.0..1.0))
    }

    /// Sum of a few low-frequency cosines with seeded phases, in `[0, 1]`.
    fn smooth(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
            let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
            let s: f64 = waves
                .iter()
                .map(|(a, b, p)| (a * u * 3.0 + b * v * 3.0 + p).cos())
                .sum();
            0.5 + s / 6.0
        })
    }

    fn clamp(i: isize, n: usize) -> usize {
        i.clamp(0, n as isize - 1) as usize
    }

    /// Per-window ridge regression of `p` on `guide`, then averaging of the
    /// coefficients over all windows covering each pixel.
    fn guided_oracle(p: &Tensor<f64>, guide: &Tensor<f64>, r: usize, eps: f64) -> Tensor<f64> {
        let s = p.shape();
        let (h, w) = (s.h, s.w);
        let ri = r as isize;
        let mut a = vec![0.0; h * w];
        let mut b = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut samples = Vec::new();
                for dy in -ri..=ri {
                    for dx in -ri..=ri {
                        let (sy, sx) = (clamp(y as isize + dy, h), clamp(x as isize + dx, w));
                        samples.push((guide.at(0, 0, sy, sx), p.at(0, 0, sy, sx)));
                    }
                }
                let n = samples.len() as f64;
                let mi = samples.iter().map(|s| s.0).sum::<f64>() / n;
                let mp = samples.iter().map(|s| s.1).sum::<f64>() / n;
                let sxx: f64 = samples.iter().map(|s| (s.0 - mi) * (s.0 - mi)).sum::<f64>() / n;
                let sxy: f64 = samples.iter().map(|s| (s.0 - mi) * (s.1 - mp)).sum::<f64>() / n;
                a[y * w + x] = sxy / (sxx + eps);
                b[y * w + x] = mp - a[y * w + x] * mi;
            }
        }
        Tensor::from_fn(s, |_, _, y, x| {
            let (mut ma, mut mb, mut n) = (0.0, 0.0, 0.0);
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (sy, sx) = (clamp(y as isize + dy, h), clamp(x as isize + dx, w));
                    ma += a[sy * w + sx];
                    mb += b[sy * w + sx];
                    n += 1.0;
                }
            }
            ma / n * guide.at(0, 0, y, x) + mb / n
        })
    }

    #[test]
    fn split_of_constant_and_impulse() {
        let c = Tensor::<f64>::full(Shape::new(1, 1, 20, 20), 0.4);
        let (b, d) = base_detail_split(&c, 15).unwrap();
        assert!(b.max_abs_diff(&c).unwrap() < 1e-12);
        assert!(d.max_abs() < 1e-12);
        let mut imp = Tensor::<f64>::zeros(Shape::new(1, 1, 5, 5));
        imp.set(0, 0, 2, 2, 1.0);
        let (b, _) = base_detail_split(&imp, 1).unwrap();
        assert!((b.at(0, 0, 2, 2) - 1.0 / 9.0).abs() < 1e-15);
        assert!(base_detail_split(&imp, 0).is_err());
    }

    #[test]
    fn split_reconstructs_within_one_rounding() {
        let x = random(1, 17, 13).cast::<f32>();
        let (b, d) = base_detail_split(&x, 3).unwrap();
        for ((&xi, &bi), &di) in x.data().iter().zip(b.data()).zip(d.data()) {
            assert!((bi + di - xi).abs() <= f32::EPSILON * xi.abs().max(bi.abs()));
        }
    }

    #[test]
    fn sobel_cases() {
        let c = Tensor::<f64>::full(Shape::new(1, 1, 6, 6), 0.3);
        let (gx, gy) = sobel_gradients(&c).unwrap();
        assert!(gx.max_abs() < 1e-15 && gy.max_abs() < 1e-15);
        let step = Tensor::<f64>::from_fn(Shape::new(1, 1, 6, 6), |_, _, _, x| if x >= 3 { 1.0 } else { 0.0 });
        let (gx, gy) = sobel_gradients(&step).unwrap();
        for y in 1..5 {
            assert_eq!(gx.at(0, 0, y, 2), 4.0);
            assert_eq!(gx.at(0, 0, y, 3), 4.0);
        }
        assert_eq!(gy.max_abs(), 0.0);
        let img = random(3, 7, 5);
        let (gx, gy) = sobel_gradients(&img).unwrap();
        let (tx, ty) = sobel_gradients(&img.transpose_hw()).unwrap();
        assert!(tx.max_abs_diff(&gy.transpose_hw()).unwrap() < 1e-12);
        assert!(ty.max_abs_diff(&gx.transpose_hw()).unwrap() < 1e-12);
    }

    #[test]
    fn guided_filter_matches_window_regression() {
        let p = random(5, 16, 16);
        let guide = random(6, 16, 16);
        for (r, eps) in [(1, 1e-2), (3, 1e-3), (8, 1e-2)] {
            let got = guided_filter(&p, &guide, r, eps).unwrap();
            let want = guided_oracle(&p, &guide, r, eps);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-5, "r={r}");
        }
    }

    #[test]
    fn guided_filter_degenerate_guides() {
        let p = random(7, 12, 12);
        let flat = Tensor::full(p.shape(), 0.6);
        let got = guided_filter(&p, &flat, 2, 1e-2).unwrap();
        // a vanishes, leaving the window mean of the window means of p
        let twice = box_blur(&box_blur(&p, 2).unwrap(), 2).unwrap();
        assert!(got.max_abs_diff(&twice).unwrap() < 1e-12);
        let got = guided_filter(&p, &p, 2, 1e-9).unwrap();
        assert!(got.max_abs_diff(&p).unwrap() < 1e-4);
    }

    #[test]
    fn fast_guided_filter_cases() {
        let p = smooth(8, 32, 32);
        let guide = smooth(9, 32, 32);
        let exact = guided_filter(&p, &guide, 4, 1e-2).unwrap();
        assert_eq!(fast_guided_filter(&p, &guide, 4, 1e-2, 1).unwrap(), exact);
        let fast = fast_guided_filter(&p, &guide, 4, 1e-2, 2).unwrap();
        assert!(fast.max_abs_diff(&exact).unwrap() < 0.05);
        let flat = Tensor::full(p.shape(), 0.2);
        let fast = fast_guided_filter(&p, &flat, 4, 1e-2, 2).unwrap();
        let coarse = resample(&p, 2, Interpolation::Bilinear, Direction::Down).unwrap();
        let twice = box_blur(&box_blur(&coarse, 2).unwrap(), 2).unwrap();
        let want = resample(&twice, 2, Interpolation::Bilinear, Direction::Up).unwrap();
        assert!(fast.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn resample_cases() {
        let x = random(10, 8, 12);
        for mode in [Interpolation::Nearest, Interpolation::Bilinear, Interpolation::Bicubic] {
            assert_eq!(resample(&x, 1, mode, Direction::Up).unwrap(), x);
            let c = Tensor::<f64>::full(Shape::new(1, 2, 8, 8), 0.7);
            for dir in [Direction::Up, Direction::Down] {
                let r = resample(&c, 4, mode, dir).unwrap();
                assert!(r.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
            }
        }
        let s = smooth(11, 32, 32);
        let up = resample(&s, 2, Interpolation::Bilinear, Direction::Up).unwrap();
        let back = resample(&up, 2, Interpolation::Bilinear, Direction::Down).unwrap();
        assert!(back.max_abs_diff(&s).unwrap() < 0.02);
        assert!(resample(&x, 3, Interpolation::Bilinear, Direction::Down).is_err());
        assert!(resample(&x, 0, Interpolation::Bilinear, Direction::Up).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn guided_filter_is_shift_equivariant_in_p(seed in 0u64..1000, shift in -2.0f64..2.0) {
            let p = random(seed, 10, 11);
            let guide = random(seed + 1, 10, 11);
            let a = guided_filter(&p, &guide, 2, 1e-2).unwrap();
            let b = guided_filter(&p.map(|v| v + shift), &guide, 2, 1e-2).unwrap();
            prop_assert!(b.max_abs_diff(&a.map(|v| v + shift)).unwrap() < 1e-5);
        }
    }
}
