//! Trains briefly, saves a checkpoint, reloads it, and shows that the
//! reloaded model reproduces the original output and that tampering is
//! detected.

use cscfuse::pipelines::{
    ivfn_train, load_checkpoint, save_checkpoint, synth_ivf_pair_sized, Checkpoint, IvfnConfig, IvfnModel, LrSchedule,
    TrainConfig,
};
use cscfuse::Task;

fn main() -> cscfuse::Result<()> {
    let dir = std::env::temp_dir().join("cscfuse-checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| cscfuse::Error::io(&dir, e))?;
    let (_, vis) = synth_ivf_pair_sized(0, 32, 32)?;
    let image = vis.into_pixels();
    let model_cfg = IvfnConfig {
        code_channels: 4,
        depth: 2,
        ..Default::default()
    };
    let train = TrainConfig {
        epochs: 5,
        lr: LrSchedule::constant(1e-2),
        crop: 32,
        ..TrainConfig::for_task(Task::Ivf)
    };
    let outcome = ivfn_train(std::slice::from_ref(&image), &model_cfg, &train)?.into_result()?;

    let path = dir.join("ivf.ckpt");
    save_checkpoint(&outcome.model, &path)?;
    let reloaded: IvfnModel = load_checkpoint(&path)?;
    let drift = outcome
        .model
        .reconstruct(&image)?
        .max_abs_diff(&reloaded.reconstruct(&image)?)?;
    println!(
        "saved {} ({} bytes)",
        path.display(),
        std::fs::metadata(&path).map_or(0, |m| m.len())
    );
    println!("digest {}", Checkpoint::load(&path)?.digest());
    println!("reloaded model output differs by {drift:e}");

    let mut bytes = std::fs::read(&path).map_err(|e| cscfuse::Error::io(&path, e))?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    match Checkpoint::from_bytes(&bytes) {
        Err(e) => println!("tampered copy rejected: {e}"),
        Ok(_) => println!("tampered copy was accepted"),
    }
    Ok(())
}
