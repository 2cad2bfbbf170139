//! Guided multispectral super-resolution on a synthetic scene degraded by
//! the Wald protocol, compared with bicubic upsampling.
//!
//! ```text
//! cargo run --release --example guided_super_resolution -- [steps]
//! ```

use cscfuse::imaging::{resample, Direction};
use cscfuse::metrics::{psnr, ssim_metric};
use cscfuse::pipelines::{mmfn_fuse, mmfn_train, synth_spectral_scene, LrSchedule, MmfSample, MmfnConfig, TrainConfig};
use cscfuse::tensor::Interpolation;
use cscfuse::Task;

fn main() -> cscfuse::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .map_or(300, |s| s.parse().expect("steps is an integer"));
    let (lr, guide, reference) = synth_spectral_scene(0, 8, 4)?;
    println!(
        "low-resolution {} + guide {} -> target {}",
        lr.shape(),
        guide.shape(),
        reference.shape()
    );

    let model_cfg = MmfnConfig {
        code_channels: 8,
        ..Default::default()
    };
    let train = TrainConfig {
        epochs: steps,
        lr: LrSchedule::constant(2e-2),
        batch_size: 1,
        ..TrainConfig::for_task(Task::Mmf)
    };
    let sample = MmfSample {
        lr: lr.clone(),
        guide: guide.clone(),
        reference: reference.clone(),
    };
    let outcome = mmfn_train(&[sample], &model_cfg, &train)?.into_result()?;

    let bicubic = resample(&lr, 4, Interpolation::Bicubic, Direction::Up)?.clamp(0.0, 1.0);
    let network = mmfn_fuse(&outcome.model, &lr, &guide)?.clamp(0.0, 1.0);
    for (name, estimate) in [("bicubic", &bicubic), ("network", &network)] {
        println!(
            "{name:<8} PSNR {:.2} dB  SSIM {:.4}",
            psnr(&reference, estimate)?,
            ssim_metric(&reference, estimate)?
        );
    }
    Ok(())
}
