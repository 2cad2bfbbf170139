//! The three fusion networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csc::{init_filter, ActivationKind, DcuStack, DEFAULT_CODE_CHANNELS, DEFAULT_KERNEL};
use crate::error::{Error, Result};
use crate::imaging::{base_detail_split, fast_guided_filter_var, DEFAULT_BASE_RADIUS, DEFAULT_GUIDED_RADIUS};
use crate::losses::{ivf_loss_var, mef_loss_var, mse_var, MefssimConfig};
use crate::nn::{join, Mode, Parameterized, Role, Session};
use crate::tensor::{softmax_over_set, sum_all, Axis1d, ConvFilter, Interpolation, Scalar, Separable, Tensor, Var};

/// Decoder, head, and reconstruction layers: a convolution with bias.
fn init_layer<T: Scalar, R: Rng + ?Sized>(
    q_out: usize,
    q_in: usize,
    size: usize,
    rng: &mut R,
) -> Result<ConvFilter<T>> {
    let f = init_filter(q_out, q_in, size, rng)?;
    ConvFilter::new(f.weight, Some(Tensor::zeros(crate::tensor::Shape::new(1, q_out, 1, 1))))
}

fn apply_layer<T: Scalar>(sess: &Session<T>, prefix: &str, f: &ConvFilter<T>, x: &Var<T>) -> Result<Var<T>> {
    let w = sess.bind(&join(prefix, "weight"), &f.weight);
    let b = f.bias.as_ref().map(|b| sess.bind(&join(prefix, "bias"), b));
    x.conv2d(&w, b.as_ref())
}

fn visit_layer<T: Scalar>(f: &ConvFilter<T>, prefix: &str, visit: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
    visit(&join(prefix, "weight"), &f.weight, Role::Trainable);
    if let Some(b) = &f.bias {
        visit(&join(prefix, "bias"), b, Role::Trainable);
    }
}

fn visit_layer_mut<T: Scalar>(f: &mut ConvFilter<T>, prefix: &str, visit: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
    visit(&join(prefix, "weight"), &mut f.weight, Role::Trainable);
    if let Some(b) = &mut f.bias {
        visit(&join(prefix, "bias"), b, Role::Trainable);
    }
}

fn positive(value: usize, what: &str) -> Result<()> {
    if value == 0 {
        return Err(Error::Config(format!("{what} must be positive")));
    }
    Ok(())
}

/// Structure of the infrared/visible autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvfnConfig {
    pub channels: usize,
    pub code_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    /// Box radius of the base/detail split.
    pub base_radius: usize,
    pub base_activation: ActivationKind,
    pub detail_activation: ActivationKind,
}

impl Default for IvfnConfig {
    fn default() -> Self {
        IvfnConfig {
            channels: 1,
            code_channels: DEFAULT_CODE_CHANNELS,
            depth: 7,
            kernel: DEFAULT_KERNEL,
            base_radius: DEFAULT_BASE_RADIUS,
            base_activation: ActivationKind::Prelu,
            detail_activation: ActivationKind::Sst,
        }
    }
}

impl IvfnConfig {
    pub fn validate(&self) -> Result<()> {
        positive(self.channels, "channels")?;
        positive(self.code_channels, "code_channels")?;
        positive(self.depth, "depth")?;
        positive(self.base_radius, "base_radius")?;
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        Ok(())
    }
}

/// Two encoders (base and detail) and two single-layer decoders whose
/// outputs are summed and squashed by a sigmoid.
#[derive(Clone, Debug)]
pub struct IvfnModel<T: Scalar = f32> {
    pub config: IvfnConfig,
    pub base_encoder: DcuStack<T>,
    pub detail_encoder: DcuStack<T>,
    pub base_decoder: ConvFilter<T>,
    pub detail_decoder: ConvFilter<T>,
}

/// Base and detail codes of one input.
#[derive(Clone)]
pub struct IvfCodes<T: Scalar = f32> {
    pub base: Var<T>,
    pub detail: Var<T>,
}

impl<T: Scalar> IvfnModel<T> {
    pub fn init<R: Rng + ?Sized>(config: &IvfnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, q, s) = (config.channels, config.code_channels, config.kernel);
        Ok(IvfnModel {
            config: config.clone(),
            base_encoder: DcuStack::init(config.depth, c, q, s, config.base_activation, rng)?,
            detail_encoder: DcuStack::init(config.depth, c, q, s, config.detail_activation, rng)?,
            base_decoder: init_layer(c, q, s, rng)?,
            detail_decoder: init_layer(c, q, s, rng)?,
        })
    }

    pub fn encode(&self, sess: &Session<T>, x: &Tensor<T>) -> Result<IvfCodes<T>> {
        let (base, detail) = base_detail_split(x, self.config.base_radius)?;
        Ok(IvfCodes {
            base: self.base_encoder.forward(sess, "base_encoder", &sess.input(base))?,
            detail: self
                .detail_encoder
                .forward(sess, "detail_encoder", &sess.input(detail))?,
        })
    }

    pub fn decode(&self, sess: &Session<T>, codes: &IvfCodes<T>) -> Result<Var<T>> {
        let b = apply_layer(sess, "base_decoder", &self.base_decoder, &codes.base)?;
        let d = apply_layer(sess, "detail_decoder", &self.detail_decoder, &codes.detail)?;
        Ok(b.add(&d)?.sigmoid())
    }

    pub fn reconstruct_var(&self, sess: &Session<T>, x: &Tensor<T>) -> Result<Var<T>> {
        let codes = self.encode(sess, x)?;
        self.decode(sess, &codes)
    }

    /// Eval-mode autoencoder output.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let sess = Session::inference(Mode::Eval);
        Ok(self.reconstruct_var(&sess, x)?.value().clone())
    }

    /// Training objective on a batch of single-channel images.
    pub fn loss_var(&self, sess: &Session<T>, x: &Tensor<T>, lambda: f64) -> Result<Var<T>> {
        let x_hat = self.reconstruct_var(sess, x)?;
        ivf_loss_var(&sess.input(x.clone()), &x_hat, lambda)
    }

    pub fn cast<U: Scalar>(&self) -> IvfnModel<U> {
        IvfnModel {
            config: self.config.clone(),
            base_encoder: self.base_encoder.cast(),
            detail_encoder: self.detail_encoder.cast(),
            base_decoder: self.base_decoder.cast(),
            detail_decoder: self.detail_decoder.cast(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for IvfnModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
        self.base_encoder.visit(&join(prefix, "base_encoder"), f);
        self.detail_encoder.visit(&join(prefix, "detail_encoder"), f);
        visit_layer(&self.base_decoder, &join(prefix, "base_decoder"), f);
        visit_layer(&self.detail_decoder, &join(prefix, "detail_decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
        self.base_encoder.visit_mut(&join(prefix, "base_encoder"), f);
        self.detail_encoder.visit_mut(&join(prefix, "detail_encoder"), f);
        visit_layer_mut(&mut self.base_decoder, &join(prefix, "base_decoder"), f);
        visit_layer_mut(&mut self.detail_decoder, &join(prefix, "detail_decoder"), f);
    }
}

/// Structure of the multi-exposure weight network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MefnConfig {
    pub code_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub activation: ActivationKind,
}

impl Default for MefnConfig {
    fn default() -> Self {
        MefnConfig {
            code_channels: DEFAULT_CODE_CHANNELS,
            depth: 3,
            kernel: DEFAULT_KERNEL,
            activation: ActivationKind::Sst,
        }
    }
}

impl MefnConfig {
    pub fn validate(&self) -> Result<()> {
        positive(self.code_channels, "code_channels")?;
        positive(self.depth, "depth")?;
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        Ok(())
    }
}

/// Luma encoder plus a 1×1 head giving one logit map per exposure.
#[derive(Clone, Debug)]
pub struct MefnModel<T: Scalar = f32> {
    pub config: MefnConfig,
    pub encoder: DcuStack<T>,
    pub head: ConvFilter<T>,
}

/// Fused luma of one stack and the per-exposure weights that produced it.
#[derive(Clone)]
pub struct LumaFusion<T: Scalar = f32> {
    pub fused: Var<T>,
    pub weights: Vec<Var<T>>,
}

impl<T: Scalar> MefnModel<T> {
    pub fn init<R: Rng + ?Sized>(config: &MefnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let q = config.code_channels;
        Ok(MefnModel {
            config: config.clone(),
            encoder: DcuStack::init(config.depth, 1, q, config.kernel, config.activation, rng)?,
            head: init_layer(1, q, 1, rng)?,
        })
    }

    /// One logit map per batch item of a `(n, 1, h, w)` luma batch.
    pub fn logits(&self, sess: &Session<T>, y: &Tensor<T>) -> Result<Var<T>> {
        let code = self.encoder.forward(sess, "encoder", &sess.input(y.clone()))?;
        apply_layer(sess, "head", &self.head, &code)
    }

    /// Fuses several luma stacks in one pass; every stack is a list of
    /// `(1, 1, h, w)` planes of equal size.
    pub fn fuse_luma_batch(&self, sess: &Session<T>, stacks: &[Vec<Tensor<T>>]) -> Result<Vec<LumaFusion<T>>> {
        let planes: Vec<Tensor<T>> = stacks.iter().flatten().cloned().collect();
        if stacks.iter().any(|s| s.len() < 2) {
            return Err(Error::InvalidArgument(
                "exposure fusion needs at least two exposures".into(),
            ));
        }
        let logits = self.logits(sess, &Tensor::stack_batch(&planes)?)?;
        let mut out = Vec::with_capacity(stacks.len());
        let mut next = 0;
        for stack in stacks {
            let maps = (next..next + stack.len())
                .map(|i| logits.batch_item(i))
                .collect::<Result<Vec<_>>>()?;
            next += stack.len();
            let weights = softmax_over_set(&maps)?;
            let terms = weights
                .iter()
                .zip(stack)
                .map(|(w, y)| w.mul(&sess.input(y.clone())))
                .collect::<Result<Vec<_>>>()?;
            out.push(LumaFusion {
                fused: sum_all(&terms)?,
                weights,
            });
        }
        Ok(out)
    }

    pub fn fuse_luma(&self, sess: &Session<T>, stack: &[Tensor<T>]) -> Result<LumaFusion<T>> {
        Ok(self
            .fuse_luma_batch(sess, &[stack.to_vec()])?
            .pop()
            .expect("one stack in, one fusion out"))
    }

    /// Mean halo-regularised loss over a batch of luma stacks.
    pub fn loss_var(
        &self,
        sess: &Session<T>,
        stacks: &[Vec<Tensor<T>>],
        lambda: f64,
        cfg: &MefssimConfig,
    ) -> Result<Var<T>> {
        let fused = self.fuse_luma_batch(sess, stacks)?;
        let losses = fused
            .iter()
            .zip(stacks)
            .map(|(f, s)| mef_loss_var(s, &f.fused, lambda, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(sum_all(&losses)?.scale(T::of(1.0 / stacks.len() as f64)))
    }

    pub fn cast<U: Scalar>(&self) -> MefnModel<U> {
        MefnModel {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            head: self.head.cast(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for MefnModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        visit_layer(&self.head, &join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        visit_layer_mut(&mut self.head, &join(prefix, "head"), f);
    }
}

/// Structure of the guided super-resolution network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmfnConfig {
    /// Channels of the low-resolution input.
    pub lr_channels: usize,
    pub guide_channels: usize,
    pub out_channels: usize,
    pub code_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub scale: usize,
    pub guided_radius: usize,
    pub guided_eps: f64,
    pub guided_subsample: usize,
    pub activation: ActivationKind,
}

impl Default for MmfnConfig {
    fn default() -> Self {
        MmfnConfig {
            lr_channels: 8,
            guide_channels: 3,
            out_channels: 8,
            code_channels: DEFAULT_CODE_CHANNELS,
            depth: 4,
            kernel: DEFAULT_KERNEL,
            scale: 4,
            guided_radius: DEFAULT_GUIDED_RADIUS,
            guided_eps: 1e-2,
            guided_subsample: 4,
            activation: ActivationKind::Sst,
        }
    }
}

impl MmfnConfig {
    pub fn validate(&self) -> Result<()> {
        positive(self.lr_channels, "lr_channels")?;
        positive(self.guide_channels, "guide_channels")?;
        positive(self.out_channels, "out_channels")?;
        positive(self.code_channels, "code_channels")?;
        positive(self.depth, "depth")?;
        positive(self.scale, "scale")?;
        positive(self.guided_radius, "guided_radius")?;
        positive(self.guided_subsample, "guided_subsample")?;
        if !(self.guided_eps > 0.0) {
            return Err(Error::Config("guided_eps must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        Ok(())
    }
}

/// Low-resolution and guidance encoders, code upsampling refined by a
/// fast guided filter channel by channel, and a reconstruction layer.
#[derive(Clone, Debug)]
pub struct MmfnModel<T: Scalar = f32> {
    pub config: MmfnConfig,
    pub lr_encoder: DcuStack<T>,
    pub guide_encoder: DcuStack<T>,
    pub recon: ConvFilter<T>,
}

impl<T: Scalar> MmfnModel<T> {
    pub fn init<R: Rng + ?Sized>(config: &MmfnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (q, s) = (config.code_channels, config.kernel);
        Ok(MmfnModel {
            config: config.clone(),
            lr_encoder: DcuStack::init(config.depth, config.lr_channels, q, s, config.activation, rng)?,
            guide_encoder: DcuStack::init(config.depth, config.guide_channels, q, s, config.activation, rng)?,
            recon: init_layer(config.out_channels, q, s, rng)?,
        })
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    /// Checks channel counts and that the guide is exactly `scale` times
    /// larger than the low-resolution input.
    pub fn check_inputs(&self, lr: &Tensor<T>, guide: &Tensor<T>) -> Result<()> {
        let (l, g) = (lr.shape(), guide.shape());
        let k = self.config.scale;
        if l.c != self.config.lr_channels
            || g.c != self.config.guide_channels
            || l.n != g.n
            || g.h != l.h * k
            || g.w != l.w * k
        {
            return Err(Error::Data(format!(
                "low-resolution input {l} and guide {g} do not match a {}-band input, {}-band guide at scale {k}",
                self.config.lr_channels, self.config.guide_channels
            )));
        }
        Ok(())
    }

    pub fn forward_var(&self, sess: &Session<T>, lr: &Tensor<T>, guide: &Tensor<T>) -> Result<Var<T>> {
        self.check_inputs(lr, guide)?;
        let cfg = &self.config;
        let z_lr = self.lr_encoder.forward(sess, "lr_encoder", &sess.input(lr.clone()))?;
        let z_guide = self
            .guide_encoder
            .forward(sess, "guide_encoder", &sess.input(guide.clone()))?;
        let up = if cfg.scale == 1 {
            z_lr
        } else {
            let s = lr.shape();
            let op = Separable::new(
                Axis1d::interpolate(s.h, s.h * cfg.scale, Interpolation::Bicubic),
                Axis1d::interpolate(s.w, s.w * cfg.scale, Interpolation::Bicubic),
            );
            z_lr.separable(&op)?
        };
        let refined = fast_guided_filter_var(&up, &z_guide, cfg.guided_radius, cfg.guided_eps, cfg.guided_subsample)?;
        apply_layer(sess, "recon", &self.recon, &refined)
    }

    /// Eval-mode high-resolution estimate, unclipped.
    pub fn super_resolve(&self, lr: &Tensor<T>, guide: &Tensor<T>) -> Result<Tensor<T>> {
        let sess = Session::inference(Mode::Eval);
        Ok(self.forward_var(&sess, lr, guide)?.value().clone())
    }

    /// Mean squared error against the high-resolution reference.
    pub fn loss_var(
        &self,
        sess: &Session<T>,
        lr: &Tensor<T>,
        guide: &Tensor<T>,
        reference: &Tensor<T>,
    ) -> Result<Var<T>> {
        let out = self.forward_var(sess, lr, guide)?;
        reference.expect_shape("mmfn reference", out.shape())?;
        let n = reference.numel() as f64;
        Ok(mse_var(&out, &sess.input(reference.clone()))?.scale(T::of(1.0 / n)))
    }

    pub fn cast<U: Scalar>(&self) -> MmfnModel<U> {
        MmfnModel {
            config: self.config.clone(),
            lr_encoder: self.lr_encoder.cast(),
            guide_encoder: self.guide_encoder.cast(),
            recon: self.recon.cast(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for MmfnModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role)) {
        self.lr_encoder.visit(&join(prefix, "lr_encoder"), f);
        self.guide_encoder.visit(&join(prefix, "guide_encoder"), f);
        visit_layer(&self.recon, &join(prefix, "recon"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role)) {
        self.lr_encoder.visit_mut(&join(prefix, "lr_encoder"), f);
        self.guide_encoder.visit_mut(&join(prefix, "guide_encoder"), f);
        visit_layer_mut(&mut self.recon, &join(prefix, "recon"), f);
    }
}
