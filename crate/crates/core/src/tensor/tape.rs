//! Tape-based reverse-mode differentiation over the crate's fixed operator
//! set.
//!
//! A [`Graph`] records every operation executed on its [`Var`]s together with
//! the values the backward rule needs. [`Graph::backward`] then makes one
//! reverse sweep over the tape, visiting each recorded node once in reverse
//! execution order and accumulating gradients additively where a value fans
//! out to several consumers.
//!
//! The tape is single-threaded (`Rc`); values themselves are immutable.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::conv::{conv2d_bias_grad, conv2d_raw, conv2d_weight_grad};
use super::{Scalar, Separable, Shape, Tensor};
use crate::error::{Error, Result};

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    Offset(usize),
    Exp(usize),
    Sigmoid(usize),
    Softplus(usize),
    Abs(usize),
    Relu(usize),
    Sum(usize),
    Conv2d {
        x: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Separable {
        x: usize,
        op: Arc<Separable>,
    },
    Sst {
        x: usize,
        gamma: usize,
    },
    Prelu {
        x: usize,
        slope: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Rc<Tensor<T>>,
        inv_std: Vec<T>,
        train: bool,
    },
    BatchItem {
        x: usize,
        index: usize,
    },
    StackBatch(Vec<usize>),
    WindowDot {
        x: usize,
        templates: Rc<Vec<T>>,
        side: usize,
    },
}

pub(crate) struct Node<T: Scalar> {
    pub value: Rc<Tensor<T>>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

pub(crate) struct Tape<T: Scalar> {
    pub nodes: Vec<Node<T>>,
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Shared handle to one recording tape.
pub struct Graph<T: Scalar = f32> {
    pub(crate) inner: Rc<RefCell<Tape<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a [`Graph`].
pub struct Var<T: Scalar = f32> {
    pub(crate) graph: Graph<T>,
    pub(crate) id: usize,
    pub(crate) value: Rc<Tensor<T>>,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            graph: self.graph.clone(),
            id: self.id,
            value: Rc::clone(&self.value),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(Tape {
                nodes: Vec::new(),
                signature: FNV_OFFSET,
            })),
        }
    }

    /// A leaf that gradients are taken with respect to.
    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hash of the branch taken by every piecewise operator so far
    /// (shrinkage dead zone, ReLU side, sign of `|·|`). Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.inner.borrow().signature
    }

    pub(crate) fn mix_signature(&self, codes: impl Iterator<Item = u8>) {
        let mut tape = self.inner.borrow_mut();
        let mut h = tape.signature;
        for c in codes {
            h ^= c as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff;
        tape.signature = h.wrapping_mul(FNV_PRIME);
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<T> {
        let value = Rc::new(value);
        let mut tape = self.inner.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            value: Rc::clone(&value),
            op,
            requires_grad,
        });
        Var {
            graph: self.clone(),
            id,
            value,
        }
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: &Var<T>) -> Result<Grads<T>> {
        if !Rc::ptr_eq(&self.inner, &loss.graph.inner) {
            return Err(Error::InvalidArgument("loss belongs to another graph".into()));
        }
        if loss.value.numel() != 1 {
            return Err(Error::shape("backward", "scalar loss", loss.value.shape()));
        }
        let tape = self.inner.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(tape.nodes.len(), || None);
        grads[loss.id] = Some(Tensor::ones(loss.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &tape.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&tape.nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }
}

/// Result of one reverse sweep.
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros if nothing reached it.
    pub fn wrt(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.value.shape()))
    }
}

fn accumulate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) -> Result<()> {
    if !nodes[id].requires_grad {
        return Ok(());
    }
    debug_assert_eq!(g.shape(), nodes[id].value.shape());
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *v;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

fn per_channel(shape: Shape, idx: usize) -> usize {
    (idx / shape.plane()) % shape.c
}

fn backprop<T: Scalar>(nodes: &[Node<T>], id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
    let needs = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone())?;
            accumulate(nodes, grads, *b, g.clone())?;
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone())?;
            if needs(*b) {
                accumulate(nodes, grads, *b, g.scale(-T::one()))?;
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, g.mul(val(*b))?)?;
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, g.mul(val(*a))?)?;
            }
        }
        Op::Div(a, b) => {
            let bv = val(*b);
            if needs(*a) {
                accumulate(nodes, grads, *a, g.zip_map(bv, "div", |gv, d| gv / d)?)?;
            }
            if needs(*b) {
                // d(a/b)/db = -(a/b)/b
                let gb = Tensor::from_fn(g.shape(), |n, c, y, x| {
                    -g.at(n, c, y, x) * out.at(n, c, y, x) / bv.at(n, c, y, x)
                });
                accumulate(nodes, grads, *b, gb)?;
            }
        }
        Op::Scale(a, k) => accumulate(nodes, grads, *a, g.scale(*k))?,
        Op::Offset(a) => accumulate(nodes, grads, *a, g.clone())?,
        Op::Exp(a) => accumulate(nodes, grads, *a, g.mul(out)?)?,
        Op::Sigmoid(a) => {
            let d = g.zip_map(out, "sigmoid", |gv, s| gv * s * (T::one() - s))?;
            accumulate(nodes, grads, *a, d)?
        }
        Op::Softplus(a) => {
            let d = g.zip_map(val(*a), "softplus", |gv, x| gv * sigmoid(x))?;
            accumulate(nodes, grads, *a, d)?
        }
        Op::Abs(a) => {
            let d = g.zip_map(val(*a), "abs", |gv, x| {
                if x > T::zero() {
                    gv
                } else if x < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            })?;
            accumulate(nodes, grads, *a, d)?
        }
        Op::Relu(a) => {
            let d = g.zip_map(val(*a), "relu", |gv, x| if x > T::zero() { gv } else { T::zero() })?;
            accumulate(nodes, grads, *a, d)?
        }
        Op::Sum(a) => {
            let gv = g.data()[0];
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), gv))?
        }
        Op::Conv2d { x, weight, bias } => {
            let w = val(*weight);
            if needs(*x) {
                let flipped = super::ConvFilter {
                    weight: w.clone(),
                    bias: None,
                }
                .flip();
                accumulate(nodes, grads, *x, conv2d_raw(g, &flipped.weight, None)?)?;
            }
            if needs(*weight) {
                let k = w.shape().h;
                accumulate(nodes, grads, *weight, conv2d_weight_grad(val(*x), g, k)?)?;
            }
            if let Some(b) = bias {
                if needs(*b) {
                    accumulate(nodes, grads, *b, conv2d_bias_grad(g))?;
                }
            }
        }
        Op::Separable { x, op } => {
            accumulate(nodes, grads, *x, op.adjoint().apply(g)?)?;
        }
        Op::Sst { x, gamma } => {
            let xv = val(*x);
            let gm = val(*gamma).data();
            let s = xv.shape();
            if needs(*x) {
                let mut d = g.clone();
                for (i, v) in d.data_mut().iter_mut().enumerate() {
                    let t = gm[per_channel(s, i)];
                    if xv.data()[i].abs() <= t {
                        *v = T::zero();
                    }
                }
                accumulate(nodes, grads, *x, d)?;
            }
            if needs(*gamma) {
                let mut d = Tensor::zeros(val(*gamma).shape());
                for (i, (&xi, &gi)) in xv.data().iter().zip(g.data()).enumerate() {
                    let c = per_channel(s, i);
                    if xi > gm[c] {
                        d.data_mut()[c] -= gi;
                    } else if xi < -gm[c] {
                        d.data_mut()[c] += gi;
                    }
                }
                accumulate(nodes, grads, *gamma, d)?;
            }
        }
        Op::Prelu { x, slope } => {
            let xv = val(*x);
            let sl = val(*slope).data();
            let s = xv.shape();
            if needs(*x) {
                let mut d = g.clone();
                for (i, v) in d.data_mut().iter_mut().enumerate() {
                    if xv.data()[i] < T::zero() {
                        *v *= sl[per_channel(s, i)];
                    }
                }
                accumulate(nodes, grads, *x, d)?;
            }
            if needs(*slope) {
                let mut d = Tensor::zeros(val(*slope).shape());
                for (i, (&xi, &gi)) in xv.data().iter().zip(g.data()).enumerate() {
                    if xi < T::zero() {
                        d.data_mut()[per_channel(s, i)] += gi * xi;
                    }
                }
                accumulate(nodes, grads, *slope, d)?;
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let s = xhat.shape();
            let gm = val(*gamma).data();
            let m = T::of((s.n * s.plane()) as f64);
            let mut sum_g = vec![T::zero(); s.c];
            let mut sum_gx = vec![T::zero(); s.c];
            for n in 0..s.n {
                for c in 0..s.c {
                    for (&gv, &xh) in g.plane(n, c).iter().zip(xhat.plane(n, c)) {
                        sum_g[c] += gv;
                        sum_gx[c] += gv * xh;
                    }
                }
            }
            if needs(*x) {
                let mut d = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let k = gm[c] * inv_std[c];
                        let dst = d.plane_mut(n, c);
                        let gp = g.plane(n, c);
                        let xp = xhat.plane(n, c);
                        for ((o, &gv), &xh) in dst.iter_mut().zip(gp).zip(xp) {
                            *o = if *train {
                                k * (gv - sum_g[c] / m - xh * sum_gx[c] / m)
                            } else {
                                k * gv
                            };
                        }
                    }
                }
                accumulate(nodes, grads, *x, d)?;
            }
            if needs(*gamma) {
                accumulate(nodes, grads, *gamma, Tensor::new(Shape::new(1, s.c, 1, 1), sum_gx)?)?;
            }
            if needs(*beta) {
                accumulate(nodes, grads, *beta, Tensor::new(Shape::new(1, s.c, 1, 1), sum_g)?)?;
            }
        }
        Op::BatchItem { x, index } => {
            let xs = val(*x).shape();
            let mut d = Tensor::zeros(xs);
            let len = xs.c * xs.plane();
            d.data_mut()[index * len..(index + 1) * len].copy_from_slice(g.data());
            accumulate(nodes, grads, *x, d)?;
        }
        Op::StackBatch(parts) => {
            let mut offset = 0;
            for &p in parts {
                let ps = val(p).shape();
                let len = ps.numel();
                if needs(p) {
                    let d = Tensor::new(ps, g.data()[offset..offset + len].to_vec())?;
                    accumulate(nodes, grads, p, d)?;
                }
                offset += len;
            }
        }
        Op::WindowDot { x, templates, side } => {
            let xs = val(*x).shape();
            let os = out.shape();
            let area = side * side;
            let inv = T::one() / T::of(area as f64);
            let mut d = Tensor::zeros(xs);
            let mut t = 0;
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let dst = d.plane_mut(n, c);
                    let gp = g.plane(n, c);
                    for wy in 0..os.h {
                        for wx in 0..os.w {
                            let gv = gp[wy * os.w + wx] * inv;
                            let tpl = &templates[t * area..(t + 1) * area];
                            for a in 0..*side {
                                for b in 0..*side {
                                    dst[(wy + a) * xs.w + wx + b] += gv * tpl[a * side + b];
                                }
                            }
                            t += 1;
                        }
                    }
                }
            }
            accumulate(nodes, grads, *x, d)?;
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
