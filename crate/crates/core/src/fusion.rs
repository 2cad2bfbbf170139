//! Hand-designed rules for merging two feature maps, and the chroma rule for
//! exposure stacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{box_blur, guided_filter, saliency_map, DEFAULT_GUIDED_EPS, DEFAULT_GUIDED_RADIUS};
use crate::tensor::{Scalar, Shape, Tensor};

/// Complementary per-element weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPair<T: Scalar = f32> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

impl<T: Scalar> WeightPair<T> {
    /// `w2 = 1 − w1`.
    pub fn from_first(w1: Tensor<T>) -> Self {
        let w2 = w1.map(|v| T::one() - v);
        WeightPair { w1, w2 }
    }

    pub fn uniform(shape: Shape) -> Self {
        Self::from_first(Tensor::full(shape, T::of(0.5)))
    }

    /// `w1 ⊗ a + w2 ⊗ b`.
    pub fn combine(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.w1.mul(a)?.add(&self.w2.mul(b)?)
    }

    pub fn swapped(&self) -> Self {
        WeightPair {
            w1: self.w2.clone(),
            w2: self.w1.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    Average,
    L1,
    Saliency,
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(FusionStrategy::Average),
            "l1" => Ok(FusionStrategy::L1),
            "saliency" => Ok(FusionStrategy::Saliency),
            other => Err(Error::Config(format!(
                "unknown fusion strategy '{other}' (expected average, l1 or saliency)"
            ))),
        }
    }
}

/// Dispatches to one of the three rules, with default filter settings.
pub fn fuse<T: Scalar>(strategy: FusionStrategy, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, WeightPair<T>)> {
    match strategy {
        FusionStrategy::Average => {
            let w = WeightPair::uniform(a.shape());
            Ok((fuse_average(a, b)?, w))
        }
        FusionStrategy::L1 => fuse_l1(a, b),
        FusionStrategy::Saliency => fuse_saliency(a, b, DEFAULT_GUIDED_RADIUS, DEFAULT_GUIDED_EPS),
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shapes(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Ratio `x/(x + y)`, with 0.5 where both are zero.
fn share<T: Scalar>(x: T, y: T) -> T {
    let total = x + y;
    if total > T::zero() {
        x / total
    } else {
        T::of(0.5)
    }
}

pub fn fuse_average<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "fuse_average")?;
    a.zip_map(b, "fuse_average", |x, y| (x + y) * T::of(0.5))
}

/// Channel-summed absolute activity, 3×3 mean filtered.
fn l1_activity<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let mut act = Tensor::zeros(s.with_c(1));
    for n in 0..s.n {
        let dst = act.plane_mut(n, 0);
        for c in 0..s.c {
            for (d, v) in dst.iter_mut().zip(x.plane(n, c)) {
                *d += v.abs();
            }
        }
    }
    box_blur(&act, 1)
}

fn broadcast_channels<T: Scalar>(w: &Tensor<T>, c: usize) -> Tensor<T> {
    Tensor::from_fn(w.shape().with_c(c), |n, _, y, x| w.at(n, 0, y, x))
}

/// Weights from windowed ℓ1 activity, one map per input shared by all
/// channels.
pub fn fuse_l1<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, WeightPair<T>)> {
    same_shape(a, b, "fuse_l1")?;
    let (aa, ab) = (l1_activity(a)?, l1_activity(b)?);
    let w1 = aa.zip_map(&ab, "fuse_l1", share)?;
    let weights = WeightPair::from_first(broadcast_channels(&w1, a.shape().c));
    Ok((weights.combine(a, b)?, weights))
}

/// Initial and guided-filter-refined saliency weights.
#[derive(Clone, Debug)]
pub struct SaliencyWeights<T: Scalar = f32> {
    pub initial: WeightPair<T>,
    pub refined: WeightPair<T>,
}

/// Per-channel histogram saliency ratios, each refined by a guided filter
/// steered by its own input and renormalised to sum to one.
pub fn saliency_weights<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    radius: usize,
    eps: f64,
) -> Result<SaliencyWeights<T>> {
    same_shape(a, b, "fuse_saliency")?;
    let initial = WeightPair::from_first(saliency_map(a).zip_map(&saliency_map(b), "fuse_saliency", share)?);
    let g1 = guided_filter(&initial.w1, a, radius, eps)?;
    let g2 = guided_filter(&initial.w2, b, radius, eps)?;
    let w1 = g1.zip_map(&g2, "fuse_saliency", |x, y| share(x.max(T::zero()), y.max(T::zero())))?;
    Ok(SaliencyWeights {
        initial,
        refined: WeightPair::from_first(w1),
    })
}

pub fn fuse_saliency<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    radius: usize,
    eps: f64,
) -> Result<(Tensor<T>, WeightPair<T>)> {
    let w = saliency_weights(a, b, radius, eps)?.refined;
    Ok((w.combine(a, b)?, w))
}

/// Per-pixel weights `|b_k − 0.5|` normalised over the stack; neutral
/// pixels fall back to equal weights.
pub fn chroma_weights<T: Scalar>(planes: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    let first = planes
        .first()
        .ok_or_else(|| Error::InvalidArgument("chroma fusion needs at least one plane".into()))?;
    for p in &planes[1..] {
        same_shape(first, p, "fuse_chroma_l1")?;
    }
    let half = T::of(0.5);
    let k = T::of(planes.len() as f64);
    let mut total = Tensor::zeros(first.shape());
    for p in planes {
        for (t, v) in total.data_mut().iter_mut().zip(p.data()) {
            *t += (*v - half).abs();
        }
    }
    Ok(planes
        .iter()
        .map(|p| {
            p.zip_map(&total, "fuse_chroma_l1", |v, t| {
                if t > T::zero() {
                    (v - half).abs() / t
                } else {
                    T::one() / k
                }
            })
            .expect("shapes checked")
        })
        .collect())
}

pub fn fuse_chroma_l1<T: Scalar>(planes: &[Tensor<T>]) -> Result<Tensor<T>> {
    let weights = chroma_weights(planes)?;
    let mut out = Tensor::zeros(planes[0].shape());
    for (w, p) in weights.iter().zip(planes) {
        for ((o, wi), v) in out.data_mut().iter_mut().zip(w.data()).zip(p.data()) {
            *o += *wi * *v;
        }
    }
    Ok(out)
}
