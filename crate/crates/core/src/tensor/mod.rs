//! Minimal deterministic tensor engine: dense `(n, c, h, w)` arrays,
//! same-padded convolution, separable linear maps, and reverse-mode
//! differentiation over a fixed operator set.

mod conv;
mod dense;
pub mod gradcheck;
mod ops;
mod parallel;
mod separable;
mod tape;

pub use conv::{conv2d, conv2d_bias_grad, conv2d_transpose, conv2d_weight_grad};
pub use dense::{flip_filter, ConvFilter, Scalar, Shape, Tensor};
pub use gradcheck::{finite_diff_check, grad, GradCheckConfig, GradCheckReport, ParamMap, VarMap};
pub use ops::{softmax_over_set, stack_batch, sum_all, BatchStats, BnMode};
pub use parallel::{worker_count, THREADS_ENV};
pub use separable::{gaussian_kernel, Axis1d, Interpolation, Separable};
pub use tape::{Grads, Graph, Var};

use crate::error::{Error, Result};

/// Elementwise soft shrinkage with a per-channel threshold.
pub fn sst<T: Scalar>(x: &Tensor<T>, gamma: &[T]) -> Result<Tensor<T>> {
    let s = x.shape();
    if gamma.len() != s.c {
        return Err(Error::shape("sst", format!("{} thresholds", s.c), gamma.len()));
    }
    if gamma.iter().any(|&g| g < T::zero()) {
        return Err(Error::InvalidArgument("shrinkage threshold must be nonnegative".into()));
    }
    Ok(Tensor::from_fn(s, |n, c, y, xx| {
        ops::shrink(x.at(n, c, y, xx), gamma[c])
    }))
}

/// Elementwise parametric ReLU with a per-channel slope.
pub fn prelu<T: Scalar>(x: &Tensor<T>, slope: &[T]) -> Result<Tensor<T>> {
    let s = x.shape();
    if slope.len() != s.c {
        return Err(Error::shape("prelu", format!("{} slopes", s.c), slope.len()));
    }
    Ok(Tensor::from_fn(s, |n, c, y, xx| {
        let v = x.at(n, c, y, xx);
        if v >= T::zero() {
            v
        } else {
            slope[c] * v
        }
    }))
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(tape::sigmoid)
}

pub fn softplus<T: Scalar>(x: T) -> T {
    ops::softplus(x)
}

/// Position-wise softmax across equally shaped tensors.
pub fn softmax_tensors<T: Scalar>(xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    let g = Graph::new();
    let vars: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
    Ok(softmax_over_set(&vars)?
        .into_iter()
        .map(|v| v.value().clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn shrinkage_values() {
        for (x, want) in [(2.0, 1.5), (-0.3, 0.0), (-2.0, -1.5)] {
            assert_eq!(sst(&scalar(x), &[0.5]).unwrap().data()[0], want);
        }
        assert!(sst(&scalar(1.0), &[-0.1]).is_err());
    }

    #[test]
    fn prelu_values() {
        assert_eq!(prelu(&scalar(3.0), &[0.1]).unwrap().data()[0], 3.0);
        assert!((prelu(&scalar(-2.0), &[0.1]).unwrap().data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(prelu(&scalar(-5.0), &[0.0]).unwrap().data()[0], 0.0);
    }

    #[test]
    fn sigmoid_and_softmax() {
        assert_eq!(sigmoid(&scalar(0.0)).data()[0], 0.5);
        let z = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        let w = softmax_tensors(&[z.clone(), z.clone()]).unwrap();
        assert!(w.iter().all(|t| t.data().iter().all(|&v| v == 0.5)));
        let big = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 1e4);
        let w = softmax_tensors(&[big, z]).unwrap();
        for i in 0..4 {
            let (a, b) = (w[0].data()[i], w[1].data()[i]);
            assert!(a > 1.0 - 1e-12 && b < 1e-12);
            assert!((a + b - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| (c + y + x) as f64));
        let grads = g.backward(&x.sum()).unwrap();
        assert!(grads.wrt(&x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grad_of_summed_convolution_counts_overlap() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(Shape::new(1, 1, 5, 5)));
        let w = g.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
        let loss = x.conv2d(&w, None).unwrap().sum();
        let gx = g.backward(&loss).unwrap().wrt(&x);
        for y in 1..4 {
            for xx in 1..4 {
                assert_eq!(gx.at(0, 0, y, xx), 9.0);
            }
        }
        assert_eq!(gx.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(Shape::new(1, 1, 2, 2)));
        assert!(g.backward(&x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = x.add(&x).unwrap().mul(&x).unwrap(); // 2x²
        let gx = g.backward(&y.sum()).unwrap().wrt(&x);
        assert_eq!(gx.data()[0], 12.0);
    }

    #[test]
    fn batch_norm_identity_and_constant_cases() {
        let g = Graph::<f64>::new();
        // channel already zero-mean, unit variance
        let x = g.constant(Tensor::from_plane(1, 4, vec![1.0, -1.0, 1.0, -1.0]).unwrap());
        let one = g.constant(Tensor::scalar(1.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let (y, stats) = x.batch_norm(&one, &zero, BnMode::Train { eps: 1e-5 }).unwrap();
        assert!(y.value().max_abs_diff(x.value()).unwrap() < 1e-5);
        assert_eq!(stats.unwrap().var, vec![1.0]);
        let c = g.constant(Tensor::scalar(0.7));
        let (y, _) = x.batch_norm(&zero, &c, BnMode::Train { eps: 1e-5 }).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.7));
    }
}
