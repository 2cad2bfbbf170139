//! Same-padded, stride-1 2-D cross-correlation and its two adjoints.
//!
//! Every output element is accumulated by exactly one worker in a fixed
//! order, so results are bit-identical for any worker count.

use rayon::prelude::*;

use super::parallel::with_pool;
use super::{ConvFilter, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

fn check(x: Shape, w: Shape) -> Result<()> {
    if x.c != w.c {
        return Err(Error::shape("conv2d", format!("input with {} channels", w.c), x));
    }
    if w.h != w.w || w.h.is_multiple_of(2) {
        return Err(Error::shape("conv2d", "odd square kernel", w));
    }
    Ok(())
}

/// Adds `k * src` shifted by `(dy, dx)` into `dst` over the overlapping
/// region, treating everything outside `src` as zero.
#[inline]
fn accumulate_shifted<T: Scalar>(dst: &mut [T], src: &[T], h: usize, w: usize, dy: isize, dx: isize, k: T) {
    let y_lo = (-dy).max(0) as usize;
    let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
    let x_lo = (-dx).max(0) as usize;
    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
    if x_lo >= x_hi {
        return;
    }
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x_lo..y * w + x_hi];
        let sx0 = (x_lo as isize + dx) as usize;
        let s = &src[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)];
        for (o, &v) in d.iter_mut().zip(s) {
            *o += k * v;
        }
    }
}

/// `y[n,o] = b[o] + Σ_i Σ_{a,b} x[n,i,y+a-p,x+b-p] · w[o,i,a,b]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, f: &ConvFilter<T>) -> Result<Tensor<T>> {
    conv2d_raw(x, &f.weight, f.bias.as_ref())
}

pub(crate) fn conv2d_raw<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    check(xs, ws)?;
    let (h, w) = (xs.h, xs.w);
    let k = ws.h;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let out_shape = Shape::new(xs.n, ws.n, h, w);
    let mut out = vec![T::zero(); out_shape.numel()];
    let wd = weight.data();
    let xd = x.data();
    with_pool(|| {
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
            let (n, o) = (idx / ws.n, idx % ws.n);
            if let Some(b) = bias {
                dst.fill(b.data()[o]);
            }
            for i in 0..ws.c {
                let src = &xd[(n * xs.c + i) * plane..(n * xs.c + i + 1) * plane];
                for a in 0..k {
                    for b in 0..k {
                        let kv = wd[((o * ws.c + i) * k + a) * k + b];
                        if kv == T::zero() {
                            continue;
                        }
                        accumulate_shifted(dst, src, h, w, a as isize - pad, b as isize - pad, kv);
                    }
                }
            }
        });
    });
    Tensor::new(out_shape, out)
}

/// Adjoint of [`conv2d`] with respect to its input: correlation with the
/// flipped filter, bias ignored.
pub fn conv2d_transpose<T: Scalar>(y: &Tensor<T>, f: &ConvFilter<T>) -> Result<Tensor<T>> {
    let flipped = f.flip();
    conv2d_raw(y, &flipped.weight, None)
}

/// Gradient of `⟨gy, conv2d(x, w)⟩` with respect to `w`.
pub fn conv2d_weight_grad<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>, kernel: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    let gs = gy.shape();
    if xs.n != gs.n || xs.h != gs.h || xs.w != gs.w {
        return Err(Error::shapes("conv2d_weight_grad", xs.with_c(gs.c), gs));
    }
    let (h, w) = (xs.h, xs.w);
    let pad = (kernel / 2) as isize;
    let plane = h * w;
    let ws = Shape::new(gs.c, xs.c, kernel, kernel);
    let mut out = vec![T::zero(); ws.numel()];
    let xd = x.data();
    let gd = gy.data();
    let per_out = xs.c * kernel * kernel;
    with_pool(|| {
        out.par_chunks_mut(per_out).enumerate().for_each(|(o, dst)| {
            for i in 0..xs.c {
                for a in 0..kernel {
                    for b in 0..kernel {
                        let dy = a as isize - pad;
                        let dx = b as isize - pad;
                        let y_lo = (-dy).max(0) as usize;
                        let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let g = &gd[(n * gs.c + o) * plane..(n * gs.c + o + 1) * plane];
                            let src = &xd[(n * xs.c + i) * plane..(n * xs.c + i + 1) * plane];
                            for y in y_lo..y_hi {
                                let sy = (y as isize + dy) as usize;
                                let sx0 = (x_lo as isize + dx) as usize;
                                let gr = &g[y * w + x_lo..y * w + x_hi];
                                let sr = &src[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)];
                                for (&gv, &sv) in gr.iter().zip(sr) {
                                    acc += gv * sv;
                                }
                            }
                        }
                        dst[(i * kernel + a) * kernel + b] = acc;
                    }
                }
            }
        });
    });
    Tensor::new(ws, out)
}

/// Gradient of `⟨gy, conv2d(x, w) + b⟩` with respect to `b`.
pub fn conv2d_bias_grad<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let s = gy.shape();
    let mut out = Tensor::zeros(Shape::new(1, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            let v: T = gy.plane(n, c).iter().copied().sum();
            out.data_mut()[c] += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop reference.
    fn naive(x: &Tensor<f64>, f: &ConvFilter<f64>) -> Tensor<f64> {
        let xs = x.shape();
        let ws = f.weight.shape();
        let p = (ws.h / 2) as isize;
        Tensor::from_fn(Shape::new(xs.n, ws.n, xs.h, xs.w), |n, o, y, xx| {
            let mut acc = f.bias.as_ref().map_or(0.0, |b| b.data()[o]);
            for i in 0..ws.c {
                for a in 0..ws.h {
                    for b in 0..ws.w {
                        let sy = y as isize + a as isize - p;
                        let sx = xx as isize + b as isize - p;
                        if sy < 0 || sx < 0 || sy >= xs.h as isize || sx >= xs.w as isize {
                            continue;
                        }
                        acc += x.at(n, i, sy as usize, sx as usize) * f.weight.at(o, i, a, b);
                    }
                }
            }
            acc
        })
    }

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn all_ones_counts_overlap() {
        let x = Tensor::<f32>::ones(Shape::new(1, 1, 3, 3));
        let f = ConvFilter::new(Tensor::ones(Shape::new(1, 1, 3, 3)), None).unwrap();
        let y = conv2d(&x, &f).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, r, c), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Shape::new(2, 1, 5, 4), &mut rng);
        let f = ConvFilter::new(Tensor::ones(Shape::new(1, 1, 1, 1)), None).unwrap();
        assert_eq!(conv2d(&x, &f).unwrap(), x);
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(Shape::new(1, 2, 5, 5), &mut rng);
        let f = ConvFilter::new(random(Shape::new(3, 2, 3, 3), &mut rng), None).unwrap();
        let d = conv2d(&x, &f).unwrap().max_abs_diff(&naive(&x, &f)).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn matches_nested_loops_up_to_max_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (n, c, h, w, q, k) in [(2, 4, 9, 9, 3, 3), (1, 3, 7, 9, 2, 5), (2, 1, 9, 8, 4, 1)] {
            let x = random(Shape::new(n, c, h, w), &mut rng);
            let bias = random(Shape::new(1, q, 1, 1), &mut rng);
            let f = ConvFilter::new(random(Shape::new(q, c, k, k), &mut rng), Some(bias)).unwrap();
            let d = conv2d(&x, &f).unwrap().max_abs_diff(&naive(&x, &f)).unwrap();
            assert!(d < 1e-6, "{d}");
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let f = ConvFilter::<f32>::zeros(1, 3, 3, false).unwrap();
        let err = conv2d(&x, &f).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = random(Shape::new(2, 3, 7, 6), &mut rng);
            let y = random(Shape::new(2, 4, 7, 6), &mut rng);
            let f = ConvFilter::new(random(Shape::new(4, 3, 3, 3), &mut rng), None).unwrap();
            let lhs = conv2d(&x, &f).unwrap().dot(&y).unwrap();
            let rhs = x.dot(&conv2d_transpose(&y, &f).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-5 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn weight_grad_is_adjoint_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(Shape::new(2, 2, 6, 5), &mut rng);
        let gy = random(Shape::new(2, 3, 6, 5), &mut rng);
        let w = random(Shape::new(3, 2, 3, 3), &mut rng);
        let f = ConvFilter::new(w.clone(), None).unwrap();
        let lhs = conv2d(&x, &f).unwrap().dot(&gy).unwrap();
        let gw = conv2d_weight_grad(&x, &gy, 3).unwrap();
        let rhs = gw.dot(&w).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
