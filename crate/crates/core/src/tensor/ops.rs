use std::rc::Rc;
use std::sync::Arc;

use super::conv::conv2d_raw;
use super::tape::{sigmoid, Op};
use super::{Graph, Scalar, Separable, Shape, Tensor, Var};
use crate::error::{Error, Result};

/// Batch-normalisation mode.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalise with the statistics of the current batch.
    Train { eps: T },
    /// Normalise with stored running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
        eps: T,
    },
}

/// Per-channel mean and biased variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// First element; intended for scalar results.
    pub fn item(&self) -> T {
        self.value.data()[0]
    }

    fn same_graph(&self, other: &Var<T>) -> Result<()> {
        if !Rc::ptr_eq(&self.graph.inner, &other.graph.inner) {
            return Err(Error::InvalidArgument("operands belong to different graphs".into()));
        }
        Ok(())
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let rg = self.requires_grad();
        self.graph.push(value, op, rg)
    }

    fn binary(&self, other: &Var<T>, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<T>> {
        self.same_graph(other)?;
        let value = self.value.zip_map(&other.value, name, f)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(value, op, rg))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn square(&self) -> Var<T> {
        self.binary(self, "square", |a, b| a * b, Op::Mul(self.id, self.id))
            .expect("self-product cannot mismatch")
    }

    pub fn scale(&self, k: T) -> Var<T> {
        self.unary(self.value.scale(k), Op::Scale(self.id, k))
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-T::one())
    }

    /// `x + k` for a constant `k`.
    pub fn offset(&self, k: T) -> Var<T> {
        self.unary(self.value.map(|v| v + k), Op::Offset(self.id))
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(self.value.map(|v| v.exp()), Op::Exp(self.id))
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary(self.value.map(sigmoid), Op::Sigmoid(self.id))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<T> {
        self.unary(self.value.map(softplus), Op::Softplus(self.id))
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&self) -> Var<T> {
        self.graph.mix_signature(
            self.value
                .data()
                .iter()
                .map(|&v| (v > T::zero()) as u8 + 2 * (v < T::zero()) as u8),
        );
        self.unary(self.value.map(|v| v.abs()), Op::Abs(self.id))
    }

    pub fn relu(&self) -> Var<T> {
        self.graph
            .mix_signature(self.value.data().iter().map(|&v| (v > T::zero()) as u8));
        self.unary(self.value.map(|v| v.max(T::zero())), Op::Relu(self.id))
    }

    pub fn sum(&self) -> Var<T> {
        self.unary(Tensor::scalar(self.value.sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<T> {
        let n = T::of(self.value.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Same-padded stride-1 cross-correlation.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        self.same_graph(weight)?;
        if let Some(b) = bias {
            self.same_graph(b)?;
        }
        let value = conv2d_raw(&self.value, &weight.value, bias.map(|b| b.value.as_ref()))?;
        let rg = self.requires_grad() || weight.requires_grad() || bias.is_some_and(|b| b.requires_grad());
        Ok(self.graph.push(
            value,
            Op::Conv2d {
                x: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
            },
            rg,
        ))
    }

    pub fn separable(&self, op: &Arc<Separable>) -> Result<Var<T>> {
        let value = op.apply(&self.value)?;
        Ok(self.unary(
            value,
            Op::Separable {
                x: self.id,
                op: Arc::clone(op),
            },
        ))
    }

    fn check_channel_param(&self, p: &Var<T>, name: &'static str) -> Result<()> {
        self.same_graph(p)?;
        p.value.expect_shape(name, Shape::new(1, self.shape().c, 1, 1))
    }

    /// Soft shrinkage `sign(x)·max(|x| − γ, 0)` with a per-channel threshold.
    pub fn sst(&self, gamma: &Var<T>) -> Result<Var<T>> {
        self.check_channel_param(gamma, "sst")?;
        let g = gamma.value.data();
        if g.iter().any(|&t| t < T::zero()) {
            return Err(Error::InvalidArgument("shrinkage threshold must be nonnegative".into()));
        }
        let s = self.shape();
        let value = Tensor::from_fn(s, |n, c, y, x| shrink(self.value.at(n, c, y, x), g[c]));
        self.graph
            .mix_signature(self.value.data().iter().enumerate().map(|(i, &v)| {
                let t = g[(i / s.plane()) % s.c];
                if v > t {
                    2
                } else if v < -t {
                    0
                } else {
                    1
                }
            }));
        let rg = self.requires_grad() || gamma.requires_grad();
        Ok(self.graph.push(
            value,
            Op::Sst {
                x: self.id,
                gamma: gamma.id,
            },
            rg,
        ))
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise, with a per-channel slope.
    pub fn prelu(&self, slope: &Var<T>) -> Result<Var<T>> {
        self.check_channel_param(slope, "prelu")?;
        let sl = slope.value.data();
        let value = Tensor::from_fn(self.shape(), |n, c, y, x| {
            let v = self.value.at(n, c, y, x);
            if v >= T::zero() {
                v
            } else {
                sl[c] * v
            }
        });
        self.graph
            .mix_signature(self.value.data().iter().map(|&v| (v >= T::zero()) as u8));
        let rg = self.requires_grad() || slope.requires_grad();
        Ok(self.graph.push(
            value,
            Op::Prelu {
                x: self.id,
                slope: slope.id,
            },
            rg,
        ))
    }

    /// Per-channel normalisation followed by the affine map `γ·x̂ + β`.
    ///
    /// In train mode the batch statistics are returned so the caller can fold
    /// them into its running estimates.
    pub fn batch_norm(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        mode: BnMode<'_, T>,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        self.check_channel_param(gamma, "batch_norm gamma")?;
        self.check_channel_param(beta, "batch_norm beta")?;
        let s = self.shape();
        let (mean, var, eps, train) = match mode {
            BnMode::Train { eps } => {
                let m = T::of((s.n * s.plane()) as f64);
                let mut mean = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for (c, mu) in mean.iter_mut().enumerate() {
                        *mu += self.value.plane(n, c).iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|v| *v = *v / m);
                let mut var = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let mu = mean[c];
                        var[c] += self.value.plane(n, c).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / m);
                (mean, var, eps, true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != s.c || running_var.len() != s.c {
                    return Err(Error::shape(
                        "batch_norm running stats",
                        format!("{} channels", s.c),
                        format!("{} / {}", running_mean.len(), running_var.len()),
                    ));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = gamma.value.data();
        let b = beta.value.data();
        let xhat = Tensor::from_fn(s, |n, c, y, x| (self.value.at(n, c, y, x) - mean[c]) * inv_std[c]);
        let value = Tensor::from_fn(s, |n, c, y, x| g[c] * xhat.at(n, c, y, x) + b[c]);
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let out = self.graph.push(
            value,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat: Rc::new(xhat),
                inv_std,
                train,
            },
            rg,
        );
        Ok((out, train.then_some(BatchStats { mean, var })))
    }

    /// Batch item `index` as a `(1, c, h, w)` value.
    pub fn batch_item(&self, index: usize) -> Result<Var<T>> {
        let s = self.shape();
        if index >= s.n {
            return Err(Error::InvalidArgument(format!(
                "batch index {index} out of range for {s}"
            )));
        }
        Ok(self.unary(self.value.batch_item(index), Op::BatchItem { x: self.id, index }))
    }

    /// Mean over each `side × side` window (stride 1, valid positions) of the
    /// elementwise product with a per-window constant template.
    ///
    /// `templates` holds, for each plane and window in row-major order,
    /// `side²` values.
    pub fn window_dot(&self, templates: Rc<Vec<T>>, side: usize) -> Result<Var<T>> {
        let s = self.shape();
        if side == 0 || side > s.h || side > s.w {
            return Err(Error::shape("window_dot", format!("planes at least {side}x{side}"), s));
        }
        let (oh, ow) = (s.h - side + 1, s.w - side + 1);
        let area = side * side;
        if templates.len() != s.planes() * oh * ow * area {
            return Err(Error::shape(
                "window_dot templates",
                s.planes() * oh * ow * area,
                templates.len(),
            ));
        }
        let inv = T::one() / T::of(area as f64);
        let mut out = Tensor::zeros(s.with_hw(oh, ow));
        let mut t = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.value.plane(n, c);
                let dst = out.plane_mut(n, c);
                for wy in 0..oh {
                    for wx in 0..ow {
                        let tpl = &templates[t * area..(t + 1) * area];
                        let mut acc = T::zero();
                        for a in 0..side {
                            for b in 0..side {
                                acc += tpl[a * side + b] * src[(wy + a) * s.w + wx + b];
                            }
                        }
                        dst[wy * ow + wx] = acc * inv;
                        t += 1;
                    }
                }
            }
        }
        Ok(self.unary(
            out,
            Op::WindowDot {
                x: self.id,
                templates,
                side,
            },
        ))
    }

    /// A constant copy of this value on the same graph.
    pub fn detach(&self) -> Var<T> {
        self.graph.constant(self.value.as_ref().clone())
    }
}

/// Concatenates values along the batch axis.
pub fn stack_batch<T: Scalar>(parts: &[Var<T>]) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("stack_batch of zero values".into()))?;
    for p in parts {
        first.same_graph(p)?;
    }
    let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value.as_ref().clone()).collect();
    let value = Tensor::stack_batch(&values)?;
    let rg = parts.iter().any(Var::requires_grad);
    Ok(first
        .graph
        .push(value, Op::StackBatch(parts.iter().map(|p| p.id).collect()), rg))
}

/// Sum of equally shaped values.
pub fn sum_all<T: Scalar>(parts: &[Var<T>]) -> Result<Var<T>> {
    let mut it = parts.iter();
    let mut acc = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("sum of zero values".into()))?
        .clone();
    for p in it {
        acc = acc.add(p)?;
    }
    Ok(acc)
}

/// Softmax across a set of equally shaped maps, position by position.
///
/// At every pixel the outputs are nonnegative and sum to one. The per-pixel
/// maximum is subtracted as a constant first, which leaves the result
/// unchanged and keeps `exp` in range.
pub fn softmax_over_set<T: Scalar>(xs: &[Var<T>]) -> Result<Vec<Var<T>>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidArgument("softmax over an empty set".into()))?;
    let shape = first.shape();
    for x in xs {
        x.value.expect_shape("softmax_over_set", shape)?;
    }
    let mut max = Tensor::full(shape, T::neg_infinity());
    for x in xs {
        for (m, &v) in max.data_mut().iter_mut().zip(x.value.data()) {
            *m = m.max(v);
        }
    }
    let max = first.graph.constant(max);
    let exps = xs.iter().map(|x| Ok(x.sub(&max)?.exp())).collect::<Result<Vec<_>>>()?;
    let denom = sum_all(&exps)?;
    exps.iter().map(|e| e.div(&denom)).collect()
}

#[inline]
pub(crate) fn shrink<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
