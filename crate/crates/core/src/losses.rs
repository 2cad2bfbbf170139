//! Training objectives. Each loss has a differentiable `_var` form working on
//! tape variables and a plain form returning a number.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Axis1d, Graph, Scalar, Separable, Shape, Tensor, Var};

/// Default weight of the structural term in the IVF loss.
pub const LAMBDA_IVF: f64 = 5.0;
/// Default saturation value of the halo weight schedule.
pub const LAMBDA_MEF_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub sigma: f64,
    pub radius: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            sigma: 1.5,
            radius: 5,
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MefssimConfig {
    pub side: usize,
    pub c: f64,
    pub sigma_l: f64,
}

impl Default for MefssimConfig {
    fn default() -> Self {
        MefssimConfig {
            side: 8,
            c: 0.03f64.powi(2),
            sigma_l: 0.2,
        }
    }
}

fn with_constants<T: Scalar, R>(tensors: &[&Tensor<T>], f: impl FnOnce(&[Var<T>]) -> Result<R>) -> Result<R> {
    let g = Graph::new();
    let vars: Vec<_> = tensors.iter().map(|t| g.constant((*t).clone())).collect();
    f(&vars)
}

fn same<T: Scalar>(a: &Var<T>, b: &Var<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shapes(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Sum of squared differences.
pub fn mse_var<T: Scalar>(x: &Var<T>, y: &Var<T>) -> Result<Var<T>> {
    same(x, y, "mse")?;
    Ok(x.sub(y)?.square().sum())
}

pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    with_constants(&[x, y], |v| Ok(mse_var(&v[0], &v[1])?.item().as_f64()))
}

/// Per-pixel SSIM index with Gaussian-weighted local statistics (replicate
/// border, same-size output).
pub fn ssim_map_var<T: Scalar>(x: &Var<T>, y: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    same(x, y, "ssim")?;
    let s = x.shape();
    let win = Separable::gaussian(s.h, s.w, cfg.sigma, cfg.radius);
    let mx = x.separable(&win)?;
    let my = y.separable(&win)?;
    let mxx = x.square().separable(&win)?;
    let myy = y.square().separable(&win)?;
    let mxy = x.mul(y)?.separable(&win)?;
    let mx2 = mx.square();
    let my2 = my.square();
    let mxmy = mx.mul(&my)?;
    let vx = mxx.sub(&mx2)?;
    let vy = myy.sub(&my2)?;
    let cxy = mxy.sub(&mxmy)?;
    let c1 = T::of(cfg.c1);
    let c2 = T::of(cfg.c2);
    let num = mxmy
        .scale(T::of(2.0))
        .offset(c1)
        .mul(&cxy.scale(T::of(2.0)).offset(c2))?;
    let den = mx2.add(&my2)?.offset(c1).mul(&vx.add(&vy)?.offset(c2))?;
    num.div(&den)
}

/// Mean SSIM over all pixels, channels and batch items.
pub fn ssim_var<T: Scalar>(x: &Var<T>, y: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    Ok(ssim_map_var(x, y, cfg)?.mean())
}

pub fn ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    with_constants(&[x, y], |v| Ok(ssim_var(&v[0], &v[1], cfg)?.item().as_f64()))
}

/// `(1/(n·h·w))·mse + λ·(1 − ssim)/(2·h·w)`.
pub fn ivf_loss_var<T: Scalar>(x: &Var<T>, x_hat: &Var<T>, lambda: f64) -> Result<Var<T>> {
    let s = x.shape();
    let hw = (s.h * s.w) as f64;
    let fit = mse_var(x, x_hat)?.scale(T::of(1.0 / (s.n as f64 * hw)));
    if lambda == 0.0 {
        return Ok(fit);
    }
    let structure = ssim_var(x, x_hat, &SsimConfig::default())?
        .neg()
        .offset(T::one())
        .scale(T::of(lambda / (2.0 * hw)));
    fit.add(&structure)
}

pub fn ivf_loss<T: Scalar>(x: &Tensor<T>, x_hat: &Tensor<T>, lambda: f64) -> Result<f64> {
    with_constants(&[x, x_hat], |v| Ok(ivf_loss_var(&v[0], &v[1], lambda)?.item().as_f64()))
}

/// `Σ(|gx| + |gy|)` over Sobel responses.
pub fn halo_loss_var<T: Scalar>(y: &Var<T>) -> Result<Var<T>> {
    let s = y.shape();
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
    y.separable(&gx)?.abs().sum().add(&y.separable(&gy)?.abs().sum())
}

pub fn halo_loss<T: Scalar>(y: &Tensor<T>) -> Result<f64> {
    with_constants(&[y], |v| Ok(halo_loss_var(&v[0])?.item().as_f64()))
}

/// Per-window constants describing the desired patch built from a source
/// stack.
struct DesiredPatches<T: Scalar> {
    /// Desired mean intensity per window.
    mean: Tensor<T>,
    /// Desired contrast per window.
    contrast: Tensor<T>,
    /// 1 where some source has contrast, 0 otherwise.
    mask: Tensor<T>,
    /// Unit-norm desired structure, `side²` values per window.
    structure: Rc<Vec<T>>,
}

fn check_stack<T: Scalar>(sources: &[Tensor<T>], fused: Shape, cfg: &MefssimConfig) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("MEF-SSIM needs at least one source".into()));
    }
    if cfg.side < 2 {
        return Err(Error::InvalidArgument("MEF-SSIM window side must be at least 2".into()));
    }
    if fused.n != 1 || fused.c != 1 {
        return Err(Error::shape("mefssim", "a single-channel fused image", fused));
    }
    for s in sources {
        s.expect_shape("mefssim source", fused)?;
    }
    if fused.h < cfg.side || fused.w < cfg.side {
        return Err(Error::shape(
            "mefssim",
            format!("planes at least {0}x{0}", cfg.side),
            fused,
        ));
    }
    Ok(())
}

fn desired_patches<T: Scalar>(sources: &[Tensor<T>], cfg: &MefssimConfig) -> DesiredPatches<f64> {
    let s = sources[0].shape();
    let side = cfg.side;
    let area = side * side;
    let (oh, ow) = (s.h - side + 1, s.w - side + 1);
    let planes: Vec<Vec<f64>> = sources
        .iter()
        .map(|t| t.data().iter().map(|v| v.as_f64()).collect())
        .collect();
    let out = Shape::new(1, 1, oh, ow);
    let mut mean = Tensor::zeros(out);
    let mut contrast = Tensor::zeros(out);
    let mut mask = Tensor::zeros(out);
    let mut structure = vec![0.0; oh * ow * area];
    let mut patch = vec![0.0; area];
    let mut sum_dev = vec![0.0; area];
    for wy in 0..oh {
        for wx in 0..ow {
            let (mut c_max, mut lw, mut lwm) = (0.0f64, 0.0, 0.0);
            sum_dev.iter_mut().for_each(|v| *v = 0.0);
            for p in &planes {
                for a in 0..side {
                    for b in 0..side {
                        patch[a * side + b] = p[(wy + a) * s.w + wx + b];
                    }
                }
                let mu = patch.iter().sum::<f64>() / area as f64;
                let mut norm2 = 0.0;
                for (d, &v) in sum_dev.iter_mut().zip(&patch) {
                    *d += v - mu;
                    norm2 += (v - mu) * (v - mu);
                }
                c_max = c_max.max(norm2.sqrt());
                let w = (-(mu - 0.5).powi(2) / (2.0 * cfg.sigma_l * cfg.sigma_l)).exp();
                lw += w;
                lwm += w * mu;
            }
            let i = wy * ow + wx;
            mean.data_mut()[i] = lwm / lw;
            contrast.data_mut()[i] = c_max;
            let norm = sum_dev.iter().map(|v| v * v).sum::<f64>().sqrt();
            if c_max > 0.0 {
                mask.data_mut()[i] = 1.0;
            }
            if norm > 0.0 {
                for (dst, v) in structure[i * area..(i + 1) * area].iter_mut().zip(&sum_dev) {
                    *dst = v / norm;
                }
            }
        }
    }
    DesiredPatches {
        mean,
        contrast,
        mask,
        structure: Rc::new(structure),
    }
}

/// Per-window structural similarity between the fused image and the
/// desired patch synthesised from the sources. Only the fused image carries
/// gradient.
pub fn mefssim_map_var<T: Scalar>(sources: &[Tensor<T>], fused: &Var<T>, cfg: &MefssimConfig) -> Result<Var<T>> {
    check_stack(sources, fused.shape(), cfg)?;
    let d = desired_patches(sources, cfg);
    let g = fused.graph();
    let s = fused.shape();
    let area = (cfg.side * cfg.side) as f64;
    let c = T::of(cfg.c);
    let valid = Separable::new(
        Axis1d::correlate_valid(s.h, &vec![1.0 / cfg.side as f64; cfg.side]),
        Axis1d::correlate_valid(s.w, &vec![1.0 / cfg.side as f64; cfg.side]),
    );
    let konst = |t: &Tensor<f64>| g.constant(t.cast::<T>());
    let l_hat = konst(&d.mean);
    let c_hat = konst(&d.contrast);
    let var_hat = konst(&d.contrast.map(|v| v * v / area));
    let mask = konst(&d.mask);
    let unmask = konst(&d.mask.map(|m| 1.0 - m));
    let templates: Rc<Vec<T>> = Rc::new(d.structure.iter().map(|&v| T::of(v)).collect());

    let mu = fused.separable(&valid)?;
    let var = fused.square().separable(&valid)?.sub(&mu.square())?;
    let luminance = l_hat
        .mul(&mu)?
        .scale(T::of(2.0))
        .offset(c)
        .div(&l_hat.square().add(&mu.square())?.offset(c))?;
    let cov = c_hat.mul(&fused.window_dot(templates, cfg.side)?)?;
    let cs = cov.scale(T::of(2.0)).offset(c).div(&var_hat.add(&var)?.offset(c))?;
    let cs = cs.mul(&mask)?.add(&unmask)?;
    luminance.mul(&cs)
}

pub fn mefssim_var<T: Scalar>(sources: &[Tensor<T>], fused: &Var<T>, cfg: &MefssimConfig) -> Result<Var<T>> {
    Ok(mefssim_map_var(sources, fused, cfg)?.mean())
}

pub fn mefssim<T: Scalar>(sources: &[Tensor<T>], fused: &Tensor<T>, cfg: &MefssimConfig) -> Result<f64> {
    with_constants(&[fused], |v| Ok(mefssim_var(sources, &v[0], cfg)?.item().as_f64()))
}

/// `(1/(h·w))·(−mefssim + λ·halo)`.
pub fn mef_loss_var<T: Scalar>(
    sources: &[Tensor<T>],
    fused: &Var<T>,
    lambda: f64,
    cfg: &MefssimConfig,
) -> Result<Var<T>> {
    let s = fused.shape();
    let hw = T::of((s.h * s.w) as f64);
    let score = mefssim_var(sources, fused, cfg)?.neg();
    let total = if lambda == 0.0 {
        score
    } else {
        score.add(&halo_loss_var(fused)?.scale(T::of(lambda)))?
    };
    Ok(total.scale(T::one() / hw))
}

pub fn mef_loss<T: Scalar>(sources: &[Tensor<T>], fused: &Tensor<T>, lambda: f64, cfg: &MefssimConfig) -> Result<f64> {
    with_constants(&[fused], |v| {
        Ok(mef_loss_var(sources, &v[0], lambda, cfg)?.item().as_f64())
    })
}

/// Halo weight at iteration `i` (1-based): `min(0.25·(i − 1), λ_max)`.
pub fn lambda_mef_schedule(i: usize, lambda_max: f64) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidArgument("schedule iterations are 1-based".into()));
    }
    Ok((0.25 * (i - 1) as f64).min(lambda_max))
}
