//! The infrared/visible, multi-exposure, and guided super-resolution
//! networks, with training, checkpoints, and synthetic data.

mod checkpoint;
mod data;
mod fuse;
mod models;
mod synth;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FusionModel, FORMAT_VERSION, MAGIC};
pub use data::{
    load_channels, load_exposure_stacks, load_ivf_images, load_mmf_samples, DatasetManifest, ManifestEntry,
    MANIFEST_FILE,
};
pub use fuse::{ivfn_fuse, mefn_fuse, mmfn_fuse, MefFusion, DEFAULT_BASE_STRATEGY, DEFAULT_DETAIL_STRATEGY};
pub use models::{IvfCodes, IvfnConfig, IvfnModel, LumaFusion, MefnConfig, MefnModel, MmfnConfig, MmfnModel};
pub use synth::{
    exposure_values, project_to_guide, spectral_projection, synth_exposure_stack, synth_exposure_stack_sized,
    synth_ivf_pair, synth_ivf_pair_sized, synth_spectral_scene, synth_spectral_scene_sized, wald_protocol, ENDMEMBERS,
    GUIDE_CENTRES, GUIDE_WIDTH, SHAPE_DOMINANCE, SYNTH_SIZE,
};
pub use train::{
    ivfn_train, ivfn_train_from, luma_stack, mefn_train, mefn_train_from, mmfn_train, mmfn_train_from, Divergence,
    EpochRecord, LrSchedule, MmfSample, Optimizer, OptimizerKind, TrainConfig, TrainLog, TrainOutcome, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPS,
};

#[cfg(test)]
mod tests;
