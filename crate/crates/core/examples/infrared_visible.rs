//! Trains a small infrared/visible autoencoder on synthetic pairs, fuses a
//! held-out pair with every base/detail rule combination, and scores the
//! results.
//!
//! ```text
//! cargo run --release --example infrared_visible -- [output dir]
//! ```

use std::path::PathBuf;

use cscfuse::fusion::FusionStrategy;
use cscfuse::imaging::{save_image, ColorSpace, ImagePlane};
use cscfuse::metrics::{evaluate_all, reports_to_csv};
use cscfuse::pipelines::{ivfn_fuse, ivfn_train, synth_ivf_pair_sized, IvfnConfig, LrSchedule, TrainConfig};
use cscfuse::Task;

fn main() -> cscfuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cscfuse-ivf"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| cscfuse::Error::io(&out, e))?;

    let mut images = Vec::new();
    for seed in 0..4 {
        let (ir, vis) = synth_ivf_pair_sized(seed, 48, 48)?;
        images.push(ir.into_pixels());
        images.push(vis.into_pixels());
    }
    let model_cfg = IvfnConfig {
        code_channels: 8,
        depth: 3,
        ..Default::default()
    };
    let train = TrainConfig {
        epochs: 40,
        lr: LrSchedule::constant(1e-2),
        batch_size: 4,
        crop: 32,
        ..TrainConfig::for_task(Task::Ivf)
    };
    let outcome = ivfn_train(&images, &model_cfg, &train)?.into_result()?;
    let first = outcome.log.epochs.first().map_or(0.0, |e| e.loss);
    let last = outcome.log.epochs.last().map_or(0.0, |e| e.loss);
    println!("trained {} steps, loss {first:.4e} -> {last:.4e}", outcome.log.steps);

    let (ir, vis) = synth_ivf_pair_sized(99, 48, 48)?;
    let strategies = [FusionStrategy::Average, FusionStrategy::L1, FusionStrategy::Saliency];
    let mut reports = Vec::new();
    for base in strategies {
        for detail in strategies {
            let fused = ivfn_fuse(&outcome.model, ir.pixels(), vis.pixels(), base, detail)?.clamp(0.0, 1.0);
            let name = format!("{base:?}_{detail:?}").to_lowercase();
            let mut report = evaluate_all(Task::Ivf, &[ir.pixels().clone(), vis.pixels().clone()], &fused)?;
            report.provenance.fused = name.clone();
            reports.push(report);
            save_image(
                &ImagePlane::new(fused, ColorSpace::Gray)?,
                out.join(format!("{name}.png")),
            )?;
        }
    }
    print!("{}", reports_to_csv(&reports));
    println!("fused images in {}", out.display());
    Ok(())
}
