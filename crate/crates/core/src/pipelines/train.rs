//! Optimisers, schedules, and the training loops of the three networks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, FusionModel};
use super::models::{IvfnConfig, IvfnModel, MefnConfig, MefnModel, MmfnConfig, MmfnModel};
use crate::csc::BN_MOMENTUM;
use crate::error::{Error, Result};
use crate::imaging::ImageStack;
use crate::losses::{lambda_mef_schedule, MefssimConfig, LAMBDA_IVF, LAMBDA_MEF_MAX};
use crate::nn::{fold_batch_stats, Mode, Parameterized, Role, Session};
use crate::task::Task;
use crate::tensor::{grad, ParamMap, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Piecewise-constant learning rate over epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    /// `(first epoch, rate)` pairs in increasing epoch order; epochs count
    /// from zero.
    #[serde(default)]
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule {
            base: rate,
            milestones: Vec::new(),
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(self.base, |&(_, r)| r)
    }

    fn validate(&self) -> Result<()> {
        let rates = std::iter::once(self.base).chain(self.milestones.iter().map(|m| m.1));
        for r in rates {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!(
                    "learning rate {r} must be finite and nonnegative"
                )));
            }
        }
        if self.milestones.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "learning-rate milestones must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: LrSchedule,
    pub batch_size: usize,
    /// Side of the random square crops.
    pub crop: usize,
    pub seed: u64,
    pub lambda_ivf: f64,
    pub lambda_mef_max: f64,
}

impl TrainConfig {
    /// Published defaults for `task`.
    pub fn for_task(task: Task) -> Self {
        let (epochs, lr) = match task {
            Task::Ivf => (
                60,
                LrSchedule {
                    base: 1e-2,
                    milestones: vec![(30, 1e-3)],
                },
            ),
            Task::Mef => (50, LrSchedule::constant(5e-4)),
            Task::Mmf => (100, LrSchedule::constant(5e-4)),
        };
        TrainConfig {
            epochs,
            optimizer: OptimizerKind::Adam,
            lr,
            batch_size: 8,
            crop: 64,
            seed: 0,
            lambda_ivf: LAMBDA_IVF,
            lambda_mef_max: LAMBDA_MEF_MAX,
        }
    }

    /// Task defaults overridden key by key by a JSON object. Unknown keys
    /// are rejected.
    pub fn from_json(task: Task, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::for_task(task)).expect("config serialises");
        match overrides {
            serde_json::Value::Object(map) => {
                for (k, v) in map {
                    base[k] = v.clone();
                }
            }
            serde_json::Value::Null => {}
            _ => return Err(Error::Config("training configuration must be a JSON object".into())),
        }
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.crop == 0 {
            return Err(Error::Config("epochs, batch_size and crop must be positive".into()));
        }
        if !(self.lambda_ivf >= 0.0) || !(self.lambda_mef_max >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        self.lr.validate()
    }
}

/// First-order update rule with per-parameter state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Updates every trainable tensor of `model` that has a gradient.
    pub fn step<M: Parameterized<f32> + ?Sized>(&mut self, model: &mut M, grads: &ParamMap<f32>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        let kind = self.kind;
        let moments = &mut self.moments;
        model.visit_mut("", &mut |name, p, role| {
            let Some(g) = grads.get(name).filter(|_| role == Role::Trainable) else {
                return;
            };
            match kind {
                OptimizerKind::Sgd => {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = (*w as f64 - lr * d as f64) as f32;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = moments
                        .entry(name.to_string())
                        .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
                    for (((w, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let d = d as f64;
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                        *w = (*w as f64 - update) as f32;
                    }
                }
            }
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub steps: usize,
}

/// Where and why a run stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    /// 1-based global step.
    pub step: usize,
    pub loss: f64,
    /// Halo weight in effect, for exposure fusion runs.
    pub lambda_mef: Option<f64>,
    pub message: String,
}

/// Per-epoch losses of a run, serialised as the JSON training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task: Task,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub diverged: Option<Divergence>,
}

impl TrainLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serialises")
    }
}

/// Final (or last good) model of a run with its checkpoint and log.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

impl<M> TrainOutcome<M> {
    pub fn diverged(&self) -> Option<&Divergence> {
        self.log.diverged.as_ref()
    }

    /// The outcome, or a divergence error describing where the run stopped.
    pub fn into_result(self) -> Result<Self> {
        match &self.log.diverged {
            None => Ok(self),
            Some(d) => Err(Error::Divergence(describe(d))),
        }
    }
}

fn describe(d: &Divergence) -> String {
    let mut s = format!("{} at epoch {} step {} (loss {})", d.message, d.epoch, d.step, d.loss);
    if let Some(l) = d.lambda_mef {
        s.push_str(&format!(", lambda_mef {l}"));
    }
    s
}

fn all_finite<M: Parameterized<f32>>(model: &M) -> bool {
    let mut ok = true;
    model.visit("", &mut |_, t, _| ok &= t.all_finite());
    ok
}

/// One step's loss plus the halo weight it used, if any.
type StepResult = Result<(crate::tensor::Var<f32>, Option<f64>)>;

/// Shared loop: shuffles item indices each epoch with the run seed, hands
/// each batch to `step_loss`, and applies the optimiser.
fn train_loop<M, F>(mut model: M, items: usize, cfg: &TrainConfig, mut step_loss: F) -> Result<TrainOutcome<M>>
where
    M: FusionModel,
    F: FnMut(&M, &Session<f32>, &[usize], &mut ChaCha8Rng, usize) -> StepResult,
{
    cfg.validate()?;
    if items == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut log = TrainLog {
        task: M::TASK,
        steps: 0,
        epochs: Vec::new(),
        diverged: None,
    };
    let mut order: Vec<usize> = (0..items).collect();
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            let step = log.steps + 1;
            let sess = Session::training(Mode::Train);
            let (loss, lambda_mef) = step_loss(&model, &sess, batch, &mut rng, step)?;
            let value = loss.item() as f64;
            let fail = |message: &str| Divergence {
                epoch,
                step,
                loss: value,
                lambda_mef,
                message: message.to_string(),
            };
            if !value.is_finite() {
                log.diverged = Some(fail("non-finite loss"));
                break 'epochs;
            }
            let grads = grad(&loss, &sess.bound_params())?;
            if grads.values().any(|g| !g.all_finite()) {
                log.diverged = Some(fail("non-finite gradient"));
                break 'epochs;
            }
            if lr > 0.0 {
                let before = model.clone();
                opt.step(&mut model, &grads, lr);
                fold_batch_stats(&mut model, &sess.take_batch_stats(), BN_MOMENTUM);
                if !all_finite(&model) {
                    model = before;
                    log.diverged = Some(fail("non-finite parameters after update"));
                    break 'epochs;
                }
            }
            log.steps = step;
            total += value;
            steps += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            loss: total / steps as f64,
            steps,
        });
    }
    let echo = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let checkpoint = Checkpoint::from_model(&model, Some(echo))?;
    Ok(TrainOutcome { model, checkpoint, log })
}

/// Top-left corner of a random `h × w` window inside `full_h × full_w`.
fn crop_origin(rng: &mut ChaCha8Rng, full_h: usize, full_w: usize, h: usize, w: usize) -> (usize, usize) {
    (rng.random_range(0..=full_h - h), rng.random_range(0..=full_w - w))
}

fn min_side(shapes: impl Iterator<Item = (usize, usize)>) -> usize {
    shapes.map(|(h, w)| h.min(w)).min().unwrap_or(0)
}

/// Autoencoder training on single-channel images, each `(1, c, h, w)`.
pub fn ivfn_train(images: &[Tensor<f32>], model: &IvfnConfig, cfg: &TrainConfig) -> Result<TrainOutcome<IvfnModel>> {
    ivfn_train_from(IvfnModel::build(model, cfg.seed)?, images, cfg)
}

pub fn ivfn_train_from(model: IvfnModel, images: &[Tensor<f32>], cfg: &TrainConfig) -> Result<TrainOutcome<IvfnModel>> {
    let c = model.config.channels;
    for (i, x) in images.iter().enumerate() {
        let s = x.shape();
        if s.n != 1 || s.c != c {
            return Err(Error::Data(format!(
                "training image {i} has shape {s}, expected {c} channel(s)"
            )));
        }
    }
    let side = cfg
        .crop
        .min(min_side(images.iter().map(|x| (x.shape().h, x.shape().w))));
    let lambda = cfg.lambda_ivf;
    train_loop(model, images.len(), cfg, |m, sess, batch, rng, _| {
        let crops = batch
            .iter()
            .map(|&i| {
                let s = images[i].shape();
                let (y, x) = crop_origin(rng, s.h, s.w, side, side);
                images[i].crop(y, x, side, side)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((m.loss_var(sess, &Tensor::stack_batch(&crops)?, lambda)?, None))
    })
}

/// Luma planes of every exposure, `(1, 1, h, w)` each.
pub fn luma_stack(stack: &ImageStack) -> Result<Vec<Tensor<f32>>> {
    stack.iter().map(|p| Ok(p.luma()?.into_pixels())).collect()
}

/// Unsupervised exposure-fusion training with the halo-weight schedule.
pub fn mefn_train(stacks: &[ImageStack], model: &MefnConfig, cfg: &TrainConfig) -> Result<TrainOutcome<MefnModel>> {
    mefn_train_from(MefnModel::build(model, cfg.seed)?, stacks, cfg)
}

pub fn mefn_train_from(model: MefnModel, stacks: &[ImageStack], cfg: &TrainConfig) -> Result<TrainOutcome<MefnModel>> {
    let lumas = stacks.iter().map(luma_stack).collect::<Result<Vec<_>>>()?;
    if let Some(i) = lumas.iter().position(|s| s.len() < 2) {
        return Err(Error::Data(format!("exposure stack {i} has fewer than two images")));
    }
    let ssim_cfg = MefssimConfig::default();
    let side = cfg
        .crop
        .min(min_side(lumas.iter().map(|s| (s[0].shape().h, s[0].shape().w))));
    if side < ssim_cfg.side {
        return Err(Error::Data(format!(
            "exposure images must be at least {0}x{0}",
            ssim_cfg.side
        )));
    }
    train_loop(model, lumas.len(), cfg, |m, sess, batch, rng, step| {
        let crops = batch
            .iter()
            .map(|&i| {
                let s = lumas[i][0].shape();
                let (y, x) = crop_origin(rng, s.h, s.w, side, side);
                lumas[i]
                    .iter()
                    .map(|p| p.crop(y, x, side, side))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let lambda = lambda_mef_schedule(step, cfg.lambda_mef_max)?;
        Ok((m.loss_var(sess, &crops, lambda, &ssim_cfg)?, Some(lambda)))
    })
}

/// A low-resolution input, its guide, and the high-resolution reference.
#[derive(Clone, Debug, PartialEq)]
pub struct MmfSample {
    pub lr: Tensor<f32>,
    pub guide: Tensor<f32>,
    pub reference: Tensor<f32>,
}

/// Supervised guided super-resolution training. Crops are taken in
/// low-resolution coordinates and mapped onto the guide and reference.
pub fn mmfn_train(samples: &[MmfSample], model: &MmfnConfig, cfg: &TrainConfig) -> Result<TrainOutcome<MmfnModel>> {
    mmfn_train_from(MmfnModel::build(model, cfg.seed)?, samples, cfg)
}

pub fn mmfn_train_from(model: MmfnModel, samples: &[MmfSample], cfg: &TrainConfig) -> Result<TrainOutcome<MmfnModel>> {
    let k = model.scale();
    for (i, s) in samples.iter().enumerate() {
        model
            .check_inputs(&s.lr, &s.guide)
            .map_err(|e| Error::Data(format!("sample {i}: {e}")))?;
        let want = s.guide.shape().with_c(model.config.out_channels);
        if s.reference.shape() != want {
            return Err(Error::Data(format!(
                "sample {i}: reference {} does not match expected {want}",
                s.reference.shape()
            )));
        }
    }
    let side = (cfg.crop / k)
        .max(1)
        .min(min_side(samples.iter().map(|s| (s.lr.shape().h, s.lr.shape().w))));
    train_loop(model, samples.len(), cfg, |m, sess, batch, rng, _| {
        let mut lrs = Vec::new();
        let mut guides = Vec::new();
        let mut refs = Vec::new();
        for &i in batch {
            let s = &samples[i];
            let (h, w) = (s.lr.shape().h, s.lr.shape().w);
            let (y, x) = crop_origin(rng, h, w, side, side);
            lrs.push(s.lr.crop(y, x, side, side)?);
            guides.push(s.guide.crop(y * k, x * k, side * k, side * k)?);
            refs.push(s.reference.crop(y * k, x * k, side * k, side * k)?);
        }
        let loss = m.loss_var(
            sess,
            &Tensor::stack_batch(&lrs)?,
            &Tensor::stack_batch(&guides)?,
            &Tensor::stack_batch(&refs)?,
        )?;
        Ok((loss, None))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn schedule_steps_at_milestones() {
        let s = TrainConfig::for_task(Task::Ivf).lr;
        assert_eq!(s.at(0), 1e-2);
        assert_eq!(s.at(29), 1e-2);
        assert_eq!(s.at(30), 1e-3);
        assert_eq!(s.at(59), 1e-3);
        assert_eq!(TrainConfig::for_task(Task::Mef).lr.at(49), 5e-4);
    }

    #[test]
    fn overrides_merge_and_unknown_keys_fail() {
        let cfg = TrainConfig::from_json(Task::Mmf, &serde_json::json!({"epochs": 3, "seed": 9})).unwrap();
        assert_eq!((cfg.epochs, cfg.seed, cfg.lr.base), (3, 9, 5e-4));
        assert!(matches!(
            TrainConfig::from_json(Task::Mmf, &serde_json::json!({"epoch": 3})),
            Err(Error::Config(_))
        ));
        assert!(TrainConfig::from_json(Task::Ivf, &serde_json::json!({"epochs": 0})).is_err());
        assert!(TrainConfig::from_json(Task::Ivf, &serde_json::json!({"lr": {"base": -1.0}})).is_err());
    }

    struct Quadratic(Tensor<f32>);

    impl Parameterized<f32> for Quadratic {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<f32>, Role)) {
            f(&crate::nn::join(prefix, "x"), &self.0, Role::Trainable);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f32>, Role)) {
            f(&crate::nn::join(prefix, "x"), &mut self.0, Role::Trainable);
        }
    }

    #[test]
    fn first_adam_step_moves_by_the_learning_rate() {
        let mut q = Quadratic(Tensor::from_plane(1, 2, vec![1.0, -3.0]).unwrap());
        let mut grads = ParamMap::new();
        grads.insert("x".to_string(), Tensor::from_plane(1, 2, vec![0.5, -200.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        opt.step(&mut q, &grads, 0.1);
        assert!((q.0.data()[0] - 0.9).abs() < 1e-6);
        assert!((q.0.data()[1] + 2.9).abs() < 1e-6);

        let mut sgd = Optimizer::new(OptimizerKind::Sgd);
        sgd.step(&mut q, &grads, 0.01);
        assert!((q.0.data()[0] - 0.895).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let target = [0.3f32, -0.7, 1.2];
        let mut q = Quadratic(Tensor::zeros(Shape::new(1, 1, 1, 3)));
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        for _ in 0..2000 {
            let grads: ParamMap<f32> = [(
                "x".to_string(),
                Tensor::from_fn(Shape::new(1, 1, 1, 3), |_, _, _, i| 2.0 * (q.0.data()[i] - target[i])),
            )]
            .into();
            opt.step(&mut q, &grads, 0.01);
        }
        for (v, t) in q.0.data().iter().zip(target) {
            assert!((v - t).abs() < 1e-3, "{v} vs {t}");
        }
    }
}
