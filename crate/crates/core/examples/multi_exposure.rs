//! Trains the exposure weight network on synthetic bracketed stacks and
//! reports MEF-SSIM on a held-out stack before and after training.
//!
//! ```text
//! cargo run --release --example multi_exposure -- [output dir]
//! ```

use std::path::PathBuf;

use cscfuse::imaging::{save_image, ColorSpace, ImagePlane, ImageStack};
use cscfuse::losses::{mefssim, MefssimConfig};
use cscfuse::pipelines::{
    luma_stack, mefn_fuse, mefn_train, synth_exposure_stack, FusionModel, LrSchedule, MefnConfig, MefnModel,
    TrainConfig,
};
use cscfuse::Task;

fn score(model: &MefnModel, stack: &ImageStack) -> cscfuse::Result<f64> {
    let fused = mefn_fuse(model, stack)?;
    mefssim(&luma_stack(stack)?, &fused.luma, &MefssimConfig::default())
}

fn main() -> cscfuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cscfuse-mef"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| cscfuse::Error::io(&out, e))?;

    let stacks = (0..4)
        .map(|s| synth_exposure_stack(s, 3))
        .collect::<cscfuse::Result<Vec<_>>>()?;
    let held_out = synth_exposure_stack(100, 3)?;
    let model_cfg = MefnConfig {
        code_channels: 8,
        ..Default::default()
    };
    let train = TrainConfig {
        epochs: 120,
        lr: LrSchedule::constant(3e-2),
        lambda_mef_max: 0.0,
        ..TrainConfig::for_task(Task::Mef)
    };
    let initial = MefnModel::build(&model_cfg, train.seed)?;
    let before = score(&initial, &held_out)?;
    let outcome = mefn_train(&stacks, &model_cfg, &train)?.into_result()?;
    let after = score(&outcome.model, &held_out)?;
    println!(
        "held-out MEF-SSIM {before:.4} -> {after:.4} after {} steps",
        outcome.log.steps
    );

    let fused = mefn_fuse(&outcome.model, &held_out)?;
    for (k, plane) in held_out.iter().enumerate() {
        save_image(plane, out.join(format!("exposure_{k}.png")))?;
    }
    for (k, w) in fused.weights.iter().enumerate() {
        save_image(
            &ImagePlane::clamped(w.clone(), ColorSpace::Gray)?,
            out.join(format!("weight_{k}.png")),
        )?;
    }
    save_image(&fused.image, out.join("fused.png"))?;
    println!("exposures, weight maps and fused image in {}", out.display());
    Ok(())
}
