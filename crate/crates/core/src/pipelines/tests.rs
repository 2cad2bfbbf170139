use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::csc::ActivationKind;
use crate::error::Error;
use crate::fusion::{fuse_average, FusionStrategy};
use crate::imaging::{percentile_stretch_image, ColorSpace, ImagePlane, ImageStack};
use crate::losses::MefssimConfig;
use crate::nn::{Mode, Parameterized, Role, Session};
use crate::tensor::{finite_diff_check, GradCheckConfig, Shape, Tensor};

const STRATEGIES: [FusionStrategy; 3] = [FusionStrategy::Average, FusionStrategy::L1, FusionStrategy::Saliency];

fn noise(seed: u64, shape: Shape) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.05..0.95))
}

fn tiny_ivf() -> IvfnConfig {
    IvfnConfig {
        code_channels: 4,
        depth: 2,
        base_radius: 2,
        ..Default::default()
    }
}

fn tiny_mef() -> MefnConfig {
    MefnConfig {
        code_channels: 4,
        depth: 2,
        ..Default::default()
    }
}

fn tiny_mmf(scale: usize) -> MmfnConfig {
    MmfnConfig {
        lr_channels: 2,
        guide_channels: 3,
        out_channels: 2,
        code_channels: 4,
        depth: 2,
        scale,
        guided_radius: 2,
        guided_subsample: 2,
        ..Default::default()
    }
}

fn gradcheck_cfg() -> GradCheckConfig {
    GradCheckConfig {
        eps: 1e-5,
        max_coords: Some(6),
        seed: 3,
        corrupt_analytic: false,
    }
}

fn quick_train(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: LrSchedule::constant(lr),
        batch_size: 2,
        crop: 16,
        seed,
        ..TrainConfig::for_task(crate::Task::Ivf)
    }
}

#[test]
fn ivf_end_to_end_gradients() {
    let model = IvfnModel::build(&tiny_ivf(), 4).unwrap().cast::<f64>();
    let x = noise(1, Shape::new(2, 1, 16, 16)).cast::<f64>();
    let params = model.named(Role::Trainable);
    let report = finite_diff_check(
        |g, vars| {
            let sess = Session::with_vars(g, vars, Mode::Train);
            model.loss_var(&sess, &x, 5.0)
        },
        &params,
        &gradcheck_cfg(),
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn mef_end_to_end_gradients() {
    let model = MefnModel::build(&tiny_mef(), 5).unwrap().cast::<f64>();
    let stack = synth_exposure_stack_sized(2, 3, 16, 16).unwrap();
    let lumas: Vec<Tensor<f64>> = luma_stack(&stack).unwrap().iter().map(Tensor::cast).collect();
    let params = model.named(Role::Trainable);
    let report = finite_diff_check(
        |g, vars| {
            let sess = Session::with_vars(g, vars, Mode::Train);
            model.loss_var(&sess, std::slice::from_ref(&lumas), 0.5, &MefssimConfig::default())
        },
        &params,
        &gradcheck_cfg(),
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn mmf_end_to_end_gradients() {
    let model = MmfnModel::build(&tiny_mmf(4), 6).unwrap().cast::<f64>();
    let (lr, guide, hr) = synth_spectral_scene_sized(3, 2, 4, 16, 16).unwrap();
    let (lr, guide, hr) = (lr.cast::<f64>(), guide.cast::<f64>(), hr.cast::<f64>());
    let params = model.named(Role::Trainable);
    let report = finite_diff_check(
        |g, vars| {
            let sess = Session::with_vars(g, vars, Mode::Train);
            model.loss_var(&sess, &lr, &guide, &hr)
        },
        &params,
        &gradcheck_cfg(),
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn zero_learning_rate_keeps_the_checkpoint() {
    let images: Vec<Tensor<f32>> = (0..3).map(|s| noise(s, Shape::new(1, 1, 16, 16))).collect();
    let initial = Checkpoint::from_model(&IvfnModel::build(&tiny_ivf(), 9).unwrap(), None).unwrap();
    let out = ivfn_train(&images, &tiny_ivf(), &quick_train(3, 0.0, 9)).unwrap();
    let trained = Checkpoint::from_model(&out.model, None).unwrap();
    assert_eq!(initial.digest(), trained.digest());
    assert_eq!(out.log.steps, 6);
}

#[test]
fn equal_seeds_give_identical_checkpoints() {
    let images: Vec<Tensor<f32>> = (0..3).map(|s| noise(s, Shape::new(1, 1, 16, 16))).collect();
    let run = |seed| ivfn_train(&images, &tiny_ivf(), &quick_train(2, 1e-2, seed)).unwrap();
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_ne!(a.checkpoint.digest(), c.checkpoint.digest());
}

#[test]
fn mef_and_mmf_training_is_deterministic() {
    let stacks: Vec<ImageStack> = (0..2)
        .map(|s| synth_exposure_stack_sized(s, 2, 16, 16).unwrap())
        .collect();
    let cfg = quick_train(1, 1e-2, 4);
    let a = mefn_train(&stacks, &tiny_mef(), &cfg).unwrap();
    let b = mefn_train(&stacks, &tiny_mef(), &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());

    let samples: Vec<MmfSample> = (0..2)
        .map(|s| {
            let (lr, guide, reference) = synth_spectral_scene_sized(s, 2, 4, 16, 16).unwrap();
            MmfSample { lr, guide, reference }
        })
        .collect();
    let a = mmfn_train(&samples, &tiny_mmf(4), &cfg).unwrap();
    let b = mmfn_train(&samples, &tiny_mmf(4), &cfg).unwrap();
    assert_eq!(a.checkpoint.digest(), b.checkpoint.digest());
}

#[test]
fn non_finite_input_is_reported_as_divergence() {
    let mut x = noise(0, Shape::new(1, 1, 16, 16));
    x.data_mut()[17] = f32::NAN;
    let out = ivfn_train(&[x], &tiny_ivf(), &quick_train(2, 1e-2, 0)).unwrap();
    let d = out.diverged().expect("divergence recorded").clone();
    assert_eq!((d.epoch, d.step), (0, 1));
    assert!(matches!(out.into_result(), Err(Error::Divergence(_))));
}

#[test]
fn exploding_updates_stop_with_finite_parameters() {
    let images = vec![noise(0, Shape::new(1, 1, 16, 16))];
    let mut cfg = quick_train(5, 1e38, 0);
    cfg.optimizer = OptimizerKind::Sgd;
    let out = ivfn_train(&images, &tiny_ivf(), &cfg).unwrap();
    assert!(out.diverged().is_some());
    out.model.visit("", &mut |name, t, _| assert!(t.all_finite(), "{name}"));
}

#[test]
fn identical_ivf_inputs_reproduce_the_reconstruction() {
    let model = IvfnModel::build(&tiny_ivf(), 2).unwrap();
    let x = noise(5, Shape::new(1, 1, 16, 16));
    let recon = model.reconstruct(&x).unwrap();
    for base in STRATEGIES {
        for detail in STRATEGIES {
            let fused = ivfn_fuse(&model, &x, &x, base, detail).unwrap();
            assert!(fused.max_abs_diff(&recon).unwrap() < 1e-6, "{base:?}/{detail:?}");
        }
    }
}

#[test]
fn average_fusion_decodes_mean_codes() {
    let model = IvfnModel::build(&tiny_ivf(), 3).unwrap();
    let (ir, vis) = (noise(6, Shape::new(1, 1, 16, 16)), noise(7, Shape::new(1, 1, 16, 16)));
    let sess = Session::inference(Mode::Eval);
    let (a, b) = (model.encode(&sess, &ir).unwrap(), model.encode(&sess, &vis).unwrap());
    let mean = |p: &Tensor<f32>, q: &Tensor<f32>| p.add(q).unwrap().scale(0.5);
    let codes = IvfCodes {
        base: sess.input(mean(a.base.value(), b.base.value())),
        detail: sess.input(mean(a.detail.value(), b.detail.value())),
    };
    let manual = model.decode(&sess, &codes).unwrap().value().clone();
    let fused = ivfn_fuse(&model, &ir, &vis, FusionStrategy::Average, FusionStrategy::Average).unwrap();
    assert!(fused.max_abs_diff(&manual).unwrap() < 1e-6);
    assert!(
        fuse_average(a.base.value(), b.base.value())
            .unwrap()
            .max_abs_diff(codes.base.value())
            .unwrap()
            < 1e-7
    );
}

#[test]
fn ivf_output_stays_in_unit_range() {
    let model = IvfnModel::build(&tiny_ivf(), 8).unwrap();
    let (ir, vis) = synth_ivf_pair_sized(4, 16, 16).unwrap();
    let fused = ivfn_fuse(
        &model,
        ir.pixels(),
        vis.pixels(),
        DEFAULT_BASE_STRATEGY,
        DEFAULT_DETAIL_STRATEGY,
    )
    .unwrap();
    assert!(fused.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn ivf_fuse_rejects_misregistered_pairs() {
    let model = IvfnModel::build(&tiny_ivf(), 8).unwrap();
    let err = ivfn_fuse(
        &model,
        &noise(0, Shape::new(1, 1, 16, 16)),
        &noise(0, Shape::new(1, 1, 16, 12)),
        FusionStrategy::L1,
        FusionStrategy::L1,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn mef_weights_are_convex() {
    let model = MefnModel::build(&tiny_mef(), 1).unwrap();
    for seed in 0..5 {
        let stack = synth_exposure_stack_sized(seed, 3, 16, 16).unwrap();
        let out = mefn_fuse(&model, &stack).unwrap();
        let total = out
            .weights
            .iter()
            .skip(1)
            .fold(out.weights[0].clone(), |acc, w| acc.add(w).unwrap());
        assert!(total.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(out
            .weights
            .iter()
            .all(|w| w.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}

#[test]
fn black_exposure_bounds_the_fused_luma() {
    let model = MefnModel::build(&tiny_mef(), 2).unwrap();
    let bright = ImagePlane::new(noise(3, Shape::new(1, 1, 16, 16)), ColorSpace::Gray).unwrap();
    let black = ImagePlane::new(Tensor::zeros(Shape::new(1, 1, 16, 16)), ColorSpace::Gray).unwrap();
    let stack = ImageStack::new(vec![black, bright.clone()]).unwrap();
    let out = mefn_fuse(&model, &stack).unwrap();
    for (f, b) in out.luma.data().iter().zip(bright.pixels().data()) {
        assert!(*f >= 0.0 && *f <= b + 1e-6);
    }
}

#[test]
fn identical_exposures_fuse_to_the_stretched_image() {
    let model = MefnModel::build(&tiny_mef(), 3).unwrap();
    let img = synth_exposure_stack_sized(7, 3, 16, 16)
        .unwrap()
        .get(1)
        .unwrap()
        .clone();
    let stack = ImageStack::new(vec![img.clone(), img.clone(), img.clone()]).unwrap();
    let out = mefn_fuse(&model, &stack).unwrap();
    let expected = percentile_stretch_image(&img).unwrap();
    assert!(out.image.pixels().max_abs_diff(expected.pixels()).unwrap() < 1e-3);
}

#[test]
fn single_exposure_is_a_config_error() {
    let model = MefnModel::build(&tiny_mef(), 3).unwrap();
    let stack = ImageStack::new(vec![synth_exposure_stack_sized(0, 2, 16, 16)
        .unwrap()
        .get(0)
        .unwrap()
        .clone()])
    .unwrap();
    assert!(matches!(mefn_fuse(&model, &stack), Err(Error::Config(_))));
}

#[test]
fn mmf_output_shape_follows_the_scale() {
    let model = MmfnModel::build(&tiny_mmf(4), 0).unwrap();
    let (lr, guide, hr) = synth_spectral_scene_sized(0, 2, 4, 32, 24).unwrap();
    assert_eq!(mmfn_fuse(&model, &lr, &guide).unwrap().shape(), hr.shape());

    let native = MmfnModel::build(&tiny_mmf(1), 0).unwrap();
    let x = noise(2, Shape::new(1, 2, 12, 12));
    let g = noise(3, Shape::new(1, 3, 12, 12));
    assert_eq!(mmfn_fuse(&native, &x, &g).unwrap().shape(), x.shape());
}

#[test]
fn mmf_shape_mismatch_names_both_shapes() {
    let model = MmfnModel::build(&tiny_mmf(4), 0).unwrap();
    let lr = Tensor::zeros(Shape::new(1, 2, 4, 4));
    let guide = Tensor::zeros(Shape::new(1, 3, 15, 16));
    match mmfn_fuse(&model, &lr, &guide) {
        Err(Error::Data(msg)) => {
            assert!(
                msg.contains(&lr.shape().to_string()) && msg.contains(&guide.shape().to_string()),
                "{msg}"
            )
        }
        other => panic!("{other:?}"),
    }
}

/// Zero padding perturbs a border band as wide as the receptive field, so
/// only the interior is compared.
#[test]
fn constant_inputs_give_constant_interior() {
    for (scale, side, margin) in [(1, 16, 6), (4, 32, 13)] {
        let cfg = MmfnConfig {
            depth: 1,
            guided_radius: 1,
            guided_subsample: 1,
            ..tiny_mmf(scale)
        };
        let model = MmfnModel::build(&cfg, 5).unwrap();
        let lr = Tensor::full(Shape::new(1, 2, side / scale, side / scale), 0.4);
        let guide = Tensor::full(Shape::new(1, 3, side, side), 0.7);
        let out = model.super_resolve(&lr, &guide).unwrap();
        for c in 0..2 {
            let centre = out.at(0, c, side / 2, side / 2);
            for y in margin..side - margin {
                for x in margin..side - margin {
                    assert!(
                        (out.at(0, c, y, x) - centre).abs() < 1e-6,
                        "scale {scale} ({c},{y},{x})"
                    );
                }
            }
        }
    }
}

#[test]
fn checkpoints_rebuild_identical_models() {
    let model = MmfnModel::build(&tiny_mmf(4), 11).unwrap();
    let ckpt = Checkpoint::from_model(&model, None).unwrap();
    let back: MmfnModel = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap().to_model().unwrap();
    let (lr, guide, _) = synth_spectral_scene_sized(1, 2, 4, 16, 16).unwrap();
    assert_eq!(
        model.super_resolve(&lr, &guide).unwrap(),
        back.super_resolve(&lr, &guide).unwrap()
    );
    assert!(matches!(ckpt.to_model::<IvfnModel>(), Err(Error::KindMismatch { .. })));
}

#[test]
fn activations_follow_the_configuration() {
    let model = IvfnModel::build(&tiny_ivf(), 0).unwrap();
    let names: Vec<String> = model.named(Role::Trainable).into_keys().collect();
    assert!(names
        .iter()
        .any(|n| n.starts_with("base_encoder.0.") && n.ends_with("slope")));
    assert!(names
        .iter()
        .any(|n| n.starts_with("detail_encoder.1.") && n.ends_with("raw")));
    assert_eq!(tiny_ivf().detail_activation, ActivationKind::Sst);
}
