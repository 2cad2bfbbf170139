//! Dictionary convolutional units and their unrolled stacks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Mode, Parameterized, Role, Session};
use crate::tensor::{softplus, BnMode, ConvFilter, Scalar, Shape, Tensor, Var};

pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_CODE_CHANNELS: usize = 64;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Shrinkage threshold of a freshly initialised unit.
pub const INITIAL_THRESHOLD: f64 = 0.01;
pub const INITIAL_PRELU_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sst,
    Prelu,
    Relu,
    Identity,
}

/// Output nonlinearity of a unit.
#[derive(Clone, Debug)]
pub enum Activation<T: Scalar = f32> {
    /// Soft shrinkage with per-channel threshold `softplus(raw)`.
    Sst {
        raw: Tensor<T>,
    },
    Prelu {
        slope: Tensor<T>,
    },
    Relu,
    Identity,
}

/// Inverse of `softplus` for positive arguments.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Scalar> Activation<T> {
    pub fn init(kind: ActivationKind, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        match kind {
            ActivationKind::Sst => Activation::Sst {
                raw: Tensor::full(shape, T::of(inverse_softplus(INITIAL_THRESHOLD))),
            },
            ActivationKind::Prelu => Activation::Prelu {
                slope: Tensor::full(shape, T::of(INITIAL_PRELU_SLOPE)),
            },
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Identity => Activation::Identity,
        }
    }

    /// Shrinkage whose effective thresholds are exactly representable up
    /// to rounding.
    pub fn sst_with_thresholds(thresholds: &[f64]) -> Result<Self> {
        if thresholds.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("shrinkage thresholds must be positive".into()));
        }
        let raw = thresholds.iter().map(|&t| T::of(inverse_softplus(t))).collect();
        Ok(Activation::Sst {
            raw: Tensor::new(Shape::new(1, thresholds.len(), 1, 1), raw)?,
        })
    }

    pub fn kind(&self) -> ActivationKind {
        match self {
            Activation::Sst { .. } => ActivationKind::Sst,
            Activation::Prelu { .. } => ActivationKind::Prelu,
            Activation::Relu => ActivationKind::Relu,
            Activation::Identity => ActivationKind::Identity,
        }
    }

    /// Effective shrinkage thresholds, if this is a shrinkage activation.
    pub fn thresholds(&self) -> Option<Vec<T>> {
        match self {
            Activation::Sst { raw } => Some(raw.data().iter().map(|&r| softplus(r)).collect()),
            _ => None,
        }
    }

    fn apply(&self, sess: &Session<T>, prefix: &str, u: &Var<T>) -> Result<Var<T>> {
        match self {
            Activation::Sst { raw } => {
                let gamma = sess.bind(&join(prefix, "threshold_raw"), raw).softplus();
                u.sst(&gamma)
            }
            Activation::Prelu { slope } => u.prelu(&sess.bind(&join(prefix, "slope"), slope)),
            Activation::Relu => Ok(u.relu()),
            Activation::Identity => Ok(u.clone()),
        }
    }

    fn cast<U: Scalar>(&self) -> Activation<U> {
        match self {
            Activation::Sst { raw } => Activation::Sst { raw: raw.cast() },
            Activation::Prelu { slope } => Activation::Prelu { slope: slope.cast() },
            Activation::Relu => Activation::Relu,
            Activation::Identity => Activation::Identity,
        }
    }
}

/// Affine batch normalisation with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        BatchNormState {
            gamma: Tensor::ones(s),
            beta: Tensor::zeros(s),
            running_mean: Tensor::zeros(s),
            running_var: Tensor::ones(s),
            eps: BN_EPS,
        }
    }

    /// Eval-mode normalisation that returns its input unchanged.
    pub fn identity(channels: usize) -> Self {
        let mut bn = Self::new(channels);
        bn.running_var = Tensor::full(bn.running_var.shape(), T::of(1.0 - BN_EPS));
        bn
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    fn apply(&self, sess: &Session<T>, prefix: &str, u: &Var<T>) -> Result<Var<T>> {
        let gamma = sess.bind(&join(prefix, "gamma"), &self.gamma);
        let beta = sess.bind(&join(prefix, "beta"), &self.beta);
        let eps = T::of(self.eps);
        match sess.mode() {
            Mode::Train => {
                let (y, stats) = u.batch_norm(&gamma, &beta, BnMode::Train { eps })?;
                if let Some(stats) = stats {
                    sess.record_batch_stats(prefix.to_string(), stats);
                }
                Ok(y)
            }
            Mode::Eval => Ok(u
                .batch_norm(
                    &gamma,
                    &beta,
                    BnMode::Eval {
                        running_mean: self.running_mean.data(),
                        running_var: self.running_var.data(),
                        eps,
                    },
                )?
                .0),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
        f(&join(prefix, "gamma"), &self.gamma, Role::Trainable);
        f(&join(prefix, "beta"), &self.beta, Role::Trainable);
        f(&join(prefix, "running_mean"), &self.running_mean, Role::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, Role::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
        f(&join(prefix, "gamma"), &mut self.gamma, Role::Trainable);
        f(&join(prefix, "beta"), &mut self.beta, Role::Trainable);
        f(&join(prefix, "running_mean"), &mut self.running_mean, Role::Buffer);
        f(&join(prefix, "running_var"), &mut self.running_var, Role::Buffer);
    }

    fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        BatchNormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            eps: self.eps,
        }
    }
}

/// Symmetric uniform initialisation in `±1/√fan_in`.
pub fn init_filter<T: Scalar, R: Rng + ?Sized>(
    q_out: usize,
    q_in: usize,
    size: usize,
    rng: &mut R,
) -> Result<ConvFilter<T>> {
    let bound = 1.0 / ((q_in * size * size) as f64).sqrt();
    let w = Tensor::from_fn(Shape::new(q_out, q_in, size, size), |_, _, _, _| {
        T::of(rng.random_range(-bound..bound))
    });
    ConvFilter::new(w, None)
}

fn bind_filter<T: Scalar>(sess: &Session<T>, prefix: &str, f: &ConvFilter<T>) -> (Var<T>, Option<Var<T>>) {
    let w = sess.bind(&join(prefix, "weight"), &f.weight);
    let b = f.bias.as_ref().map(|b| sess.bind(&join(prefix, "bias"), b));
    (w, b)
}

fn visit_filter<T: Scalar>(f: &ConvFilter<T>, prefix: &str, visit: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
    visit(&join(prefix, "weight"), &f.weight, Role::Trainable);
    if let Some(b) = &f.bias {
        visit(&join(prefix, "bias"), b, Role::Trainable);
    }
}

fn visit_filter_mut<T: Scalar>(f: &mut ConvFilter<T>, prefix: &str, visit: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
    visit(&join(prefix, "weight"), &mut f.weight, Role::Trainable);
    if let Some(b) = &mut f.bias {
        visit(&join(prefix, "bias"), b, Role::Trainable);
    }
}

/// One unrolled proximal step: `f(BN(z + conv1(x − conv0(z))))`.
///
/// `conv0` maps codes to images, `conv1` maps images back to codes.
#[derive(Clone, Debug)]
pub struct DcuParams<T: Scalar = f32> {
    pub conv0: ConvFilter<T>,
    pub conv1: ConvFilter<T>,
    pub bn: BatchNormState<T>,
    pub activation: Activation<T>,
}

impl<T: Scalar> DcuParams<T> {
    pub fn new(
        conv0: ConvFilter<T>,
        conv1: ConvFilter<T>,
        bn: BatchNormState<T>,
        activation: Activation<T>,
    ) -> Result<Self> {
        let (c, q) = (conv0.q_out(), conv0.q_in());
        if conv1.q_out() != q || conv1.q_in() != c {
            return Err(Error::shape(
                "dcu filters",
                format!("conv1 mapping {c} -> {q} channels"),
                format!("{} -> {}", conv1.q_in(), conv1.q_out()),
            ));
        }
        if bn.channels() != q {
            return Err(Error::shape("dcu batch norm", format!("{q} channels"), bn.channels()));
        }
        match &activation {
            Activation::Sst { raw: p } | Activation::Prelu { slope: p } => {
                p.expect_shape("dcu activation", Shape::new(1, q, 1, 1))?;
            }
            _ => {}
        }
        Ok(DcuParams {
            conv0,
            conv1,
            bn,
            activation,
        })
    }

    pub fn init<R: Rng + ?Sized>(c: usize, q: usize, size: usize, kind: ActivationKind, rng: &mut R) -> Result<Self> {
        let conv0 = init_filter(c, q, size, rng)?;
        let conv1 = init_filter(q, c, size, rng)?;
        Self::new(conv0, conv1, BatchNormState::new(q), Activation::init(kind, q))
    }

    /// The unit that performs exactly one ISTA step for dictionary `d`
    /// (code→image, weight `(c, q, s, s)`) with step `1/rho` and penalty
    /// `lambda`, when evaluated in eval mode.
    pub fn ista_step(d: &ConvFilter<T>, lambda: f64, rho: f64) -> Result<Self> {
        if d.bias.is_some() {
            return Err(Error::InvalidArgument("dictionary must not carry a bias".into()));
        }
        let q = d.q_in();
        Self::new(
            d.clone(),
            d.flip().scaled(T::of(1.0 / rho)),
            BatchNormState::identity(q),
            Activation::sst_with_thresholds(&vec![lambda / rho; q])?,
        )
    }

    pub fn image_channels(&self) -> usize {
        self.conv0.q_out()
    }

    pub fn code_channels(&self) -> usize {
        self.conv0.q_in()
    }

    pub fn forward(&self, sess: &Session<T>, prefix: &str, x: &Var<T>, z: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        if xs.c != self.image_channels() {
            return Err(Error::shape(
                "dcu image",
                format!("{} channels", self.image_channels()),
                xs,
            ));
        }
        z.value().expect_shape("dcu code", xs.with_c(self.code_channels()))?;
        let (w0, b0) = bind_filter(sess, &join(prefix, "conv0"), &self.conv0);
        let (w1, b1) = bind_filter(sess, &join(prefix, "conv1"), &self.conv1);
        let residual = x.sub(&z.conv2d(&w0, b0.as_ref())?)?;
        let u = z.add(&residual.conv2d(&w1, b1.as_ref())?)?;
        let u = self.bn.apply(sess, &join(prefix, "bn"), &u)?;
        self.activation.apply(sess, &join(prefix, "act"), &u)
    }

    pub fn cast<U: Scalar>(&self) -> DcuParams<U> {
        DcuParams {
            conv0: self.conv0.cast(),
            conv1: self.conv1.cast(),
            bn: self.bn.cast(),
            activation: self.activation.cast(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for DcuParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
        visit_filter(&self.conv0, &join(prefix, "conv0"), f);
        visit_filter(&self.conv1, &join(prefix, "conv1"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        match &self.activation {
            Activation::Sst { raw } => f(&join(prefix, "act.threshold_raw"), raw, Role::Trainable),
            Activation::Prelu { slope } => f(&join(prefix, "act.slope"), slope, Role::Trainable),
            _ => {}
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
        visit_filter_mut(&mut self.conv0, &join(prefix, "conv0"), f);
        visit_filter_mut(&mut self.conv1, &join(prefix, "conv1"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        match &mut self.activation {
            Activation::Sst { raw } => f(&join(prefix, "act.threshold_raw"), raw, Role::Trainable),
            Activation::Prelu { slope } => f(&join(prefix, "act.slope"), slope, Role::Trainable),
            _ => {}
        }
    }
}

/// Untied units applied in order from the zero code.
#[derive(Clone, Debug)]
pub struct DcuStack<T: Scalar = f32> {
    units: Vec<DcuParams<T>>,
}

impl<T: Scalar> DcuStack<T> {
    pub fn new(units: Vec<DcuParams<T>>) -> Result<Self> {
        let first = units
            .first()
            .ok_or_else(|| Error::InvalidArgument("a stack needs at least one unit".into()))?;
        let (c, q) = (first.image_channels(), first.code_channels());
        if let Some(bad) = units
            .iter()
            .position(|u| u.image_channels() != c || u.code_channels() != q)
        {
            return Err(Error::shape(
                "dcu stack",
                format!("units over (c={c}, q={q})"),
                format!(
                    "unit {bad} over (c={}, q={})",
                    units[bad].image_channels(),
                    units[bad].code_channels()
                ),
            ));
        }
        Ok(DcuStack { units })
    }

    pub fn init<R: Rng + ?Sized>(
        depth: usize,
        c: usize,
        q: usize,
        size: usize,
        kind: ActivationKind,
        rng: &mut R,
    ) -> Result<Self> {
        let units = (0..depth)
            .map(|_| DcuParams::init(c, q, size, kind, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(units)
    }

    pub fn units(&self) -> &[DcuParams<T>] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [DcuParams<T>] {
        &mut self.units
    }

    pub fn depth(&self) -> usize {
        self.units.len()
    }

    pub fn image_channels(&self) -> usize {
        self.units[0].image_channels()
    }

    pub fn code_channels(&self) -> usize {
        self.units[0].code_channels()
    }

    pub fn forward(&self, sess: &Session<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        let mut z = sess.input(Tensor::zeros(x.shape().with_c(self.code_channels())));
        for (i, unit) in self.units.iter().enumerate() {
            z = unit.forward(sess, &join(prefix, &i.to_string()), x, &z)?;
        }
        Ok(z)
    }

    pub fn cast<U: Scalar>(&self) -> DcuStack<U> {
        DcuStack {
            units: self.units.iter().map(DcuParams::cast).collect(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for DcuStack<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// One unit on plain tensors.
pub fn dcu_forward<T: Scalar>(u: &DcuParams<T>, x: &Tensor<T>, z: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    let sess = Session::inference(mode);
    let out = u.forward(&sess, "", &sess.input(x.clone()), &sess.input(z.clone()))?;
    Ok(out.value().clone())
}

/// A whole stack on plain tensors.
pub fn dcu_stack_forward<T: Scalar>(s: &DcuStack<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    let sess = Session::inference(mode);
    Ok(s.forward(&sess, "", &sess.input(x.clone()))?.value().clone())
}
