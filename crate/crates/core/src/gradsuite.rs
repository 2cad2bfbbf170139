//! Named finite-difference checks over every differentiable operator and
//! the three end-to-end training objectives.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csc::{ActivationKind, DcuStack};
use crate::error::{Error, Result};
use crate::imaging::{fast_guided_filter_var, guided_filter_var};
use crate::losses::{
    halo_loss_var, ivf_loss_var, mef_loss_var, mefssim_var, mse_var, ssim_var, MefssimConfig, SsimConfig,
};
use crate::nn::{Mode, Parameterized, Role, Session};
use crate::pipelines::{
    luma_stack, synth_exposure_stack_sized, synth_spectral_scene_sized, FusionModel, IvfnConfig, IvfnModel, MefnConfig,
    MefnModel, MmfnConfig, MmfnModel,
};
use crate::tensor::{
    finite_diff_check, softmax_over_set, Axis1d, BnMode, GradCheckConfig, GradCheckReport, Graph, Interpolation,
    ParamMap, Separable, Shape, Tensor, Var, VarMap,
};

/// Relative tolerance for single operators.
pub const OPERATOR_TOLERANCE: f64 = 1e-4;
/// Relative tolerance for whole training objectives.
pub const PIPELINE_TOLERANCE: f64 = 1e-3;

/// Suite groups accepted by [`run_gradient_suite`].
pub const SUITE_MODULES: [&str; 5] = ["tensor", "csc", "imaging", "losses", "pipelines"];

#[derive(Clone, Debug)]
pub struct GradCase {
    pub module: &'static str,
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

type LossFn = Box<dyn Fn(&Graph<f64>, &VarMap<f64>) -> Result<Var<f64>>>;

struct Spec {
    module: &'static str,
    name: &'static str,
    params: ParamMap<f64>,
    loss: LossFn,
    coords: Option<usize>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn params(entries: Vec<(&str, Tensor<f64>)>) -> ParamMap<f64> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Weighted sum with a distinct weight per output element.
fn probe(v: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, v.shape(), -1.0, 1.0);
    Ok(v.mul(&v.graph().constant(w))?.sum())
}

fn op(module: &'static str, name: &'static str, params: ParamMap<f64>, loss: LossFn) -> Spec {
    Spec {
        module,
        name,
        params,
        loss,
        coords: None,
    }
}

fn tensor_specs(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let x = rand_tensor(rng, Shape::new(2, 2, 5, 5), -1.0, 1.0);
    let w = rand_tensor(rng, Shape::new(3, 2, 3, 3), -0.5, 0.5);
    let b = rand_tensor(rng, Shape::new(1, 3, 1, 1), -0.5, 0.5);
    let pos = rand_tensor(rng, Shape::new(1, 2, 5, 5), 0.5, 1.5);
    let gamma = rand_tensor(rng, Shape::new(1, 2, 1, 1), 0.5, 1.5);
    let beta = rand_tensor(rng, Shape::new(1, 2, 1, 1), -0.5, 0.5);
    let thr = rand_tensor(rng, Shape::new(1, 2, 1, 1), 0.1, 0.3);
    let logits: Vec<Tensor<f64>> = (0..3)
        .map(|_| rand_tensor(rng, Shape::new(1, 1, 4, 4), -2.0, 2.0))
        .collect();
    let templates: Rc<Vec<f64>> = Rc::new((0..2 * 3 * 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect());
    vec![
        op(
            "tensor",
            "conv2d",
            params(vec![("x", x.clone()), ("w", w), ("b", b)]),
            Box::new(|_, v| probe(&v["x"].conv2d(&v["w"], Some(&v["b"]))?, 1)),
        ),
        op(
            "tensor",
            "separable_bicubic",
            params(vec![("x", x.clone())]),
            Box::new(|_, v| {
                let s = v["x"].shape();
                let up = Separable::new(
                    Axis1d::interpolate(s.h, 2 * s.h, Interpolation::Bicubic),
                    Axis1d::interpolate(s.w, 3 * s.w, Interpolation::Bicubic),
                );
                probe(&v["x"].separable(&up)?, 2)
            }),
        ),
        op(
            "tensor",
            "elementwise",
            params(vec![("x", x.clone()), ("p", pos.clone())]),
            Box::new(|_, v| {
                let a = v["x"].batch_item(0)?;
                let e = a.sigmoid().add(&a.softplus())?.add(&a.exp().scale(0.1))?;
                probe(&e.div(&v["p"])?.add(&v["p"].square())?, 3)
            }),
        ),
        op(
            "tensor",
            "sst",
            params(vec![("x", x.clone()), ("t", thr)]),
            Box::new(|_, v| probe(&v["x"].sst(&v["t"])?, 4)),
        ),
        op(
            "tensor",
            "prelu",
            params(vec![("x", x.clone()), ("a", gamma.scale(0.2))]),
            Box::new(|_, v| probe(&v["x"].prelu(&v["a"])?, 5)),
        ),
        op(
            "tensor",
            "batch_norm",
            params(vec![("x", x.clone()), ("g", gamma), ("b", beta)]),
            Box::new(|_, v| {
                let (y, _) = v["x"].batch_norm(&v["g"], &v["b"], BnMode::Train { eps: 1e-5 })?;
                probe(&y, 6)
            }),
        ),
        op(
            "tensor",
            "softmax_over_set",
            params(
                logits
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (["l0", "l1", "l2"][i], t.clone()))
                    .collect(),
            ),
            Box::new(|_, v| {
                let ws = softmax_over_set(&[v["l0"].clone(), v["l1"].clone(), v["l2"].clone()])?;
                let mut total = probe(&ws[0], 7)?;
                for (i, w) in ws.iter().enumerate().skip(1) {
                    total = total.add(&probe(w, 7 + i as u64)?)?;
                }
                Ok(total)
            }),
        ),
        op(
            "tensor",
            "window_dot",
            params(vec![("x", x)]),
            Box::new(move |_, v| probe(&v["x"].batch_item(0)?.window_dot(templates.clone(), 3)?, 10)),
        ),
    ]
}

fn csc_specs(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let mut stack_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let prelu = DcuStack::<f64>::init(2, 1, 3, 3, ActivationKind::Prelu, &mut stack_rng).expect("valid stack");
    let sst = DcuStack::<f64>::init(2, 1, 3, 3, ActivationKind::Sst, &mut stack_rng).expect("valid stack");
    let x = rand_tensor(rng, Shape::new(2, 1, 6, 6), 0.0, 1.0);
    let mut out = Vec::new();
    for (name, stack, mode) in [
        ("dcu_stack_prelu_train", prelu.clone(), Mode::Train),
        ("dcu_stack_sst_train", sst.clone(), Mode::Train),
        ("dcu_stack_sst_eval", sst, Mode::Eval),
    ] {
        let x = x.clone();
        let p = stack.named(Role::Trainable);
        out.push(op(
            "csc",
            name,
            p,
            Box::new(move |g, v| {
                let sess = Session::with_vars(g, v, mode);
                probe(&stack.forward(&sess, "", &sess.input(x.clone()))?, 11)
            }),
        ));
    }
    out
}

fn imaging_specs(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let p = rand_tensor(rng, Shape::new(1, 2, 8, 8), 0.0, 1.0);
    let guide = rand_tensor(rng, Shape::new(1, 2, 8, 8), 0.0, 1.0);
    let both = || params(vec![("p", p.clone()), ("i", guide.clone())]);
    vec![
        op(
            "imaging",
            "guided_filter",
            both(),
            Box::new(|_, v| probe(&guided_filter_var(&v["p"], &v["i"], 2, 1e-2)?, 12)),
        ),
        op(
            "imaging",
            "fast_guided_filter",
            both(),
            Box::new(|_, v| probe(&fast_guided_filter_var(&v["p"], &v["i"], 2, 1e-2, 2)?, 13)),
        ),
    ]
}

fn loss_specs(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let x = rand_tensor(rng, Shape::new(1, 1, 12, 12), 0.1, 0.9);
    let y = rand_tensor(rng, Shape::new(1, 1, 12, 12), 0.1, 0.9);
    let stack = synth_exposure_stack_sized(rng.random(), 3, 16, 16).expect("valid size");
    let sources: Vec<Tensor<f64>> = luma_stack(&stack)
        .expect("luma planes")
        .iter()
        .map(Tensor::cast)
        .collect();
    let fused = rand_tensor(rng, Shape::new(1, 1, 16, 16), 0.1, 0.9);
    let target = x.clone();
    let sources2 = sources.clone();
    vec![
        op(
            "losses",
            "mse",
            params(vec![("y", y.clone())]),
            Box::new({
                let t = target.clone();
                move |g, v| mse_var(&g.constant(t.clone()), &v["y"])
            }),
        ),
        op(
            "losses",
            "ssim",
            params(vec![("y", y.clone())]),
            Box::new({
                let t = target.clone();
                move |g, v| ssim_var(&g.constant(t.clone()), &v["y"], &SsimConfig::default())
            }),
        ),
        op(
            "losses",
            "ivf_loss",
            params(vec![("y", y.clone())]),
            Box::new(move |g, v| ivf_loss_var(&g.constant(target.clone()), &v["y"], 5.0)),
        ),
        op(
            "losses",
            "halo_loss",
            params(vec![("y", y)]),
            Box::new(|_, v| halo_loss_var(&v["y"])),
        ),
        op(
            "losses",
            "mefssim",
            params(vec![("f", fused.clone())]),
            Box::new(move |_, v| mefssim_var(&sources, &v["f"], &MefssimConfig::default())),
        ),
        op(
            "losses",
            "mef_loss",
            params(vec![("f", fused)]),
            Box::new(move |_, v| mef_loss_var(&sources2, &v["f"], 0.5, &MefssimConfig::default())),
        ),
    ]
}

fn pipeline(name: &'static str, params: ParamMap<f64>, loss: LossFn) -> Spec {
    Spec {
        module: "pipelines",
        name,
        params,
        loss,
        coords: Some(6),
    }
}

fn pipeline_specs(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let seed: u64 = rng.random();
    let ivf = IvfnModel::build(
        &IvfnConfig {
            code_channels: 4,
            depth: 2,
            base_radius: 2,
            ..Default::default()
        },
        seed,
    )
    .expect("valid config")
    .cast::<f64>();
    let mef = MefnModel::build(
        &MefnConfig {
            code_channels: 4,
            depth: 2,
            ..Default::default()
        },
        seed,
    )
    .expect("valid config")
    .cast::<f64>();
    let mmf = MmfnModel::build(
        &MmfnConfig {
            lr_channels: 2,
            out_channels: 2,
            code_channels: 4,
            depth: 2,
            guided_radius: 2,
            guided_subsample: 2,
            ..Default::default()
        },
        seed,
    )
    .expect("valid config")
    .cast::<f64>();
    let image = rand_tensor(rng, Shape::new(2, 1, 16, 16), 0.05, 0.95);
    let stack = synth_exposure_stack_sized(seed, 3, 16, 16).expect("valid size");
    let lumas: Vec<Tensor<f64>> = luma_stack(&stack)
        .expect("luma planes")
        .iter()
        .map(Tensor::cast)
        .collect();
    let (lr, guide, hr) = synth_spectral_scene_sized(seed, 2, 4, 16, 16).expect("valid size");
    let (lr, guide, hr) = (lr.cast::<f64>(), guide.cast::<f64>(), hr.cast::<f64>());
    vec![
        pipeline(
            "ivfn_objective",
            ivf.named(Role::Trainable),
            Box::new(move |g, v| {
                let sess = Session::with_vars(g, v, Mode::Train);
                ivf.loss_var(&sess, &image, 5.0)
            }),
        ),
        pipeline(
            "mefn_objective",
            mef.named(Role::Trainable),
            Box::new(move |g, v| {
                let sess = Session::with_vars(g, v, Mode::Train);
                mef.loss_var(&sess, std::slice::from_ref(&lumas), 0.5, &MefssimConfig::default())
            }),
        ),
        pipeline(
            "mmfn_objective",
            mmf.named(Role::Trainable),
            Box::new(move |g, v| {
                let sess = Session::with_vars(g, v, Mode::Train);
                mmf.loss_var(&sess, &lr, &guide, &hr)
            }),
        ),
    ]
}

type SpecGroup = fn(&mut ChaCha8Rng) -> Vec<Spec>;

/// Runs every check in `module` (all groups when `None`).
///
/// With `corrupt` set every analytic gradient is scaled before comparison,
/// so each case is expected to fail.
pub fn run_gradient_suite(module: Option<&str>, corrupt: bool) -> Result<Vec<GradCase>> {
    if let Some(m) = module {
        if !SUITE_MODULES.contains(&m) {
            return Err(Error::Config(format!(
                "unknown gradient-check module '{m}' (expected all or one of {})",
                SUITE_MODULES.join(", ")
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let groups: [(&str, SpecGroup); 5] = [
        ("tensor", tensor_specs),
        ("csc", csc_specs),
        ("imaging", imaging_specs),
        ("losses", loss_specs),
        ("pipelines", pipeline_specs),
    ];
    let mut out = Vec::new();
    for (name, build) in groups {
        let specs = build(&mut rng);
        if module.is_some_and(|m| m != name) {
            continue;
        }
        for spec in specs {
            let (tolerance, eps) = if spec.module == "pipelines" {
                (PIPELINE_TOLERANCE, 1e-5)
            } else {
                (OPERATOR_TOLERANCE, 1e-4)
            };
            let cfg = GradCheckConfig {
                eps,
                max_coords: spec.coords,
                seed: 7,
                corrupt_analytic: corrupt,
            };
            let report = finite_diff_check(&spec.loss, &spec.params, &cfg)?;
            out.push(GradCase {
                module: spec.module,
                name: spec.name,
                tolerance,
                report,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_module_is_a_config_error() {
        assert!(matches!(
            run_gradient_suite(Some("optics"), false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn filtering_keeps_one_group() {
        let cases = run_gradient_suite(Some("losses"), false).unwrap();
        assert!(!cases.is_empty());
        assert!(cases.iter().all(|c| c.module == "losses" && c.passed()), "{cases:?}");
    }
}
