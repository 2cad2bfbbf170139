//! Seeded desk-scale data: infrared/visible pairs, exposure stacks, and
//! multispectral scenes, plus the degradation used to build supervised
//! super-resolution triples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, ImagePlane, ImageStack};
use crate::tensor::{Axis1d, Scalar, Separable, Shape, Tensor};

/// Side length of generated images.
pub const SYNTH_SIZE: usize = 64;

/// Degrades a high-resolution cube into its low-resolution counterpart:
/// Gaussian blur with `σ = scale/2` (radius `⌈3σ⌉`, replicate border), then
/// keeping every `scale`-th sample starting at `scale/2`. The guide and
/// the reference are passed through unchanged.
pub fn wald_protocol<T: Scalar>(
    hr: &Tensor<T>,
    guide: &Tensor<T>,
    scale: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if scale < 2 {
        return Err(Error::InvalidArgument(format!(
            "degradation scale must be at least 2, got {scale}"
        )));
    }
    let s = hr.shape();
    if !s.h.is_multiple_of(scale) || !s.w.is_multiple_of(scale) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by scale {scale}",
            s.h, s.w
        )));
    }
    let g = guide.shape();
    if g.n != s.n || g.h != s.h || g.w != s.w {
        return Err(Error::shapes("wald_protocol guide", s.with_c(g.c), g));
    }
    let sigma = scale as f64 / 2.0;
    let radius = (3.0 * sigma).ceil() as usize;
    let blurred = Separable::gaussian(s.h, s.w, sigma, radius).apply(hr)?;
    let lr = Separable::new(
        Axis1d::decimate(s.h, scale, scale / 2),
        Axis1d::decimate(s.w, scale, scale / 2),
    )
    .apply(&blurred)?;
    Ok((lr, guide.clone(), hr.clone()))
}

fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, waves: usize) -> Vec<f64> {
    let params: Vec<[f64; 4]> = (0..waves)
        .map(|_| {
            [
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let total: f64 = params.iter().map(|p| p[3]).sum();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            let v: f64 = params
                .iter()
                .map(|p| p[3] * (std::f64::consts::TAU * (p[0] * y + p[1] * x) + p[2]).cos())
                .sum();
            0.5 + 0.5 * v / total
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Shape2d {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape2d {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        if rng.random_bool(0.5) {
            Shape2d::Disc {
                cy: rng.random_range(0.0..hf),
                cx: rng.random_range(0.0..wf),
                r: rng.random_range(0.08..0.25) * hf.min(wf),
            }
        } else {
            let (y0, x0) = (rng.random_range(0.0..hf * 0.8), rng.random_range(0.0..wf * 0.8));
            Shape2d::Rect {
                y0,
                x0,
                y1: y0 + rng.random_range(0.15..0.45) * hf,
                x1: x0 + rng.random_range(0.15..0.45) * wf,
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape2d::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape2d::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

/// Index of the topmost shape covering each pixel, if any.
fn label_map(shapes: &[Shape2d], h: usize, w: usize) -> Vec<Option<usize>> {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            shapes.iter().rposition(|s| s.contains(y, x))
        })
        .collect()
}

fn gray(h: usize, w: usize, v: Vec<f64>) -> Result<ImagePlane> {
    ImagePlane::gray(h, w, v.into_iter().map(|p| p.clamp(0.0, 1.0) as f32).collect())
}

/// A co-registered infrared/visible pair of the default size.
pub fn synth_ivf_pair(seed: u64) -> Result<(ImagePlane, ImagePlane)> {
    synth_ivf_pair_sized(seed, SYNTH_SIZE, SYNTH_SIZE)
}

/// Shared scene geometry; the visible image carries shading, reflectance
/// and fine texture, the infrared image carries per-object temperature and
/// hot spots that are invisible in the visible band.
pub fn synth_ivf_pair_sized(seed: u64, h: usize, w: usize) -> Result<(ImagePlane, ImagePlane)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<Shape2d> = (0..rng.random_range(4..8))
        .map(|_| Shape2d::random(&mut rng, h, w))
        .collect();
    let labels = label_map(&shapes, h, w);
    let reflect: Vec<f64> = shapes.iter().map(|_| rng.random_range(0.2..0.9)).collect();
    let temp: Vec<f64> = shapes.iter().map(|_| rng.random_range(0.1..0.8)).collect();
    let stripes: Vec<(f64, f64)> = shapes
        .iter()
        .map(|_| (rng.random_range(0.3..1.2), rng.random_range(0.0..std::f64::consts::PI)))
        .collect();
    let shading = smooth_field(&mut rng, h, w, 3);
    let ambient = smooth_field(&mut rng, h, w, 2);
    let spots: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(1.5..4.0),
                rng.random_range(0.4..0.8),
            )
        })
        .collect();
    let mut vis = Vec::with_capacity(h * w);
    let mut ir = Vec::with_capacity(h * w);
    for (i, label) in labels.iter().enumerate() {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let (base_v, base_t, texture) = match *label {
            Some(k) => {
                let (f, a) = stripes[k];
                (reflect[k], temp[k], 0.08 * (f * (x * a.cos() + y * a.sin())).sin())
            }
            None => (0.45, 0.15 + 0.1 * ambient[i], 0.04 * (0.9 * x).sin() * (0.7 * y).cos()),
        };
        vis.push(base_v * (0.6 + 0.4 * shading[i]) + texture);
        let hot: f64 = spots
            .iter()
            .map(|&(cy, cx, r, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
            .sum();
        ir.push(base_t + hot);
    }
    Ok((gray(h, w, ir)?, gray(h, w, vis)?))
}

/// Exposure values (in stops) of a `k`-image stack, evenly spread over
/// `[-2, 2]`.
pub fn exposure_values(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.0];
    }
    (0..k).map(|i| -2.0 + 4.0 * i as f64 / (k - 1) as f64).collect()
}

/// A `k`-image RGB exposure stack of the default size.
pub fn synth_exposure_stack(seed: u64, k: usize) -> Result<ImageStack> {
    synth_exposure_stack_sized(seed, k, SYNTH_SIZE, SYNTH_SIZE)
}

/// One high-dynamic-range radiance map seen through `k` exposures: pixel
/// value `clip((radiance · 2^ev)^(1/2.2))`, with `ev` from
/// [`exposure_values`]. Images are ordered darkest first.
pub fn synth_exposure_stack_sized(seed: u64, k: usize, h: usize, w: usize) -> Result<ImageStack> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "an exposure stack needs at least one image".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<Shape2d> = (0..rng.random_range(4..8))
        .map(|_| Shape2d::random(&mut rng, h, w))
        .collect();
    let labels = label_map(&shapes, h, w);
    let tints: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| [0; 3].map(|_| rng.random_range(0.5..1.0)))
        .collect();
    let stops: Vec<f64> = shapes.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
    let freq: Vec<f64> = shapes.iter().map(|_| rng.random_range(0.4..1.3)).collect();
    let field = smooth_field(&mut rng, h, w, 3);
    let mut log_radiance = vec![0.0; h * w];
    let mut tint = vec![[1.0; 3]; h * w];
    for (i, label) in labels.iter().enumerate() {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let sky = 4.0 * field[i] - 2.0;
        log_radiance[i] = match *label {
            Some(s) => {
                tint[i] = tints[s];
                stops[s] + 0.6 * (freq[s] * x).sin() * (freq[s] * 0.7 * y).cos()
            }
            None => sky + 0.3 * (0.8 * x + 0.5 * y).sin(),
        };
    }
    let planes = exposure_values(k)
        .into_iter()
        .map(|ev| {
            let t = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
                let i = y * w + x;
                let radiance = 0.18 * (log_radiance[i] + ev).exp2() * tint[i][c];
                radiance.powf(1.0 / 2.2).clamp(0.0, 1.0) as f32
            });
            ImagePlane::new(t, ColorSpace::Rgb)
        })
        .collect::<Result<Vec<_>>>()?;
    ImageStack::new(planes)
}

/// Centres of the red, green and blue responses, as fractions of the band
/// range.
pub const GUIDE_CENTRES: [f64; 3] = [5.0 / 6.0, 0.5, 1.0 / 6.0];
/// Width of each response in the same units.
pub const GUIDE_WIDTH: f64 = 0.2;

/// `3 × bands` projection from spectra to the RGB guide: row `r` is a
/// Gaussian over normalised band position `b/(bands−1)` centred at
/// `GUIDE_CENTRES[r]` with width `GUIDE_WIDTH`, normalised to unit sum.
pub fn spectral_projection(bands: usize) -> Vec<Vec<f64>> {
    GUIDE_CENTRES
        .iter()
        .map(|&c| {
            let row: Vec<f64> = (0..bands)
                .map(|b| {
                    let t = if bands == 1 { 0.5 } else { b as f64 / (bands - 1) as f64 };
                    (-(t - c).powi(2) / (2.0 * GUIDE_WIDTH * GUIDE_WIDTH)).exp()
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Applies [`spectral_projection`] pixel by pixel.
pub fn project_to_guide<T: Scalar>(cube: &Tensor<T>) -> Tensor<T> {
    let s = cube.shape();
    let p = spectral_projection(s.c);
    Tensor::from_fn(s.with_c(3), |n, r, y, x| {
        T::of((0..s.c).map(|b| p[r][b] * cube.at(n, b, y, x).as_f64()).sum())
    })
}

/// A spectral scene at the default size (rounded down to a multiple of
/// `scale`).
pub fn synth_spectral_scene(seed: u64, bands: usize, scale: usize) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let side = SYNTH_SIZE - SYNTH_SIZE % scale.max(1);
    synth_spectral_scene_sized(seed, bands, scale, side, side)
}

/// Number of endmember spectra mixed in a synthetic scene.
pub const ENDMEMBERS: usize = 3;

/// Abundance added to a shape's owning endmember before normalisation.
pub const SHAPE_DOMINANCE: f64 = 16.0;

/// Convex mixtures of smooth random endmember spectra. Abundances are a
/// smooth background field plus shapes dominated by one endmember. Returns `(lr, guide, hr)` where the guide is
/// [`project_to_guide`] of `hr` and `lr` comes from [`wald_protocol`].
pub fn synth_spectral_scene_sized(
    seed: u64,
    bands: usize,
    scale: usize,
    h: usize,
    w: usize,
) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    if bands == 0 {
        return Err(Error::InvalidArgument(
            "a spectral scene needs at least one band".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f64>> = (0..ENDMEMBERS)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.15..0.4),
                        rng.random_range(0.2..0.6),
                    )
                })
                .collect();
            let floor = rng.random_range(0.05..0.25);
            (0..bands)
                .map(|b| {
                    let t = if bands == 1 { 0.5 } else { b as f64 / (bands - 1) as f64 };
                    let v: f64 = bumps
                        .iter()
                        .map(|&(c, s, a)| a * (-(t - c).powi(2) / (2.0 * s * s)).exp())
                        .sum();
                    (floor + v).min(0.95)
                })
                .collect()
        })
        .collect();
    let shapes: Vec<Shape2d> = (0..rng.random_range(5..9))
        .map(|_| Shape2d::random(&mut rng, h, w))
        .collect();
    let owner: Vec<usize> = shapes.iter().map(|_| rng.random_range(0..ENDMEMBERS)).collect();
    let labels = label_map(&shapes, h, w);
    let fields: Vec<Vec<f64>> = (0..ENDMEMBERS).map(|_| smooth_field(&mut rng, h, w, 3)).collect();
    let mut abundance = vec![[0.0; ENDMEMBERS]; h * w];
    for (i, label) in labels.iter().enumerate() {
        let mut a = [0.0; ENDMEMBERS];
        for (j, f) in fields.iter().enumerate() {
            a[j] = 0.2 + f[i];
        }
        if let Some(s) = *label {
            a[owner[s]] += SHAPE_DOMINANCE;
        }
        let total: f64 = a.iter().sum();
        abundance[i] = a.map(|v| v / total);
    }
    let hr = Tensor::from_fn(Shape::new(1, bands, h, w), |_, b, y, x| {
        let a = &abundance[y * w + x];
        (0..ENDMEMBERS).map(|j| a[j] * spectra[j][b]).sum::<f64>() as f32
    });
    let guide = project_to_guide(&hr);
    wald_protocol(&hr, &guide, scale)
}
