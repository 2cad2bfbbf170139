//! Dataset manifests: a JSON file listing image pairs, stacks, or
//! super-resolution triples by path relative to the manifest.
//!
//! ```json
//! {
//!   "task": "mmf",
//!   "entries": [
//!     { "inputs": ["lr_b0.png", "lr_b1.png"], "guide": "rgb.png", "reference": ["hr_b0.png", "hr_b1.png"] }
//!   ]
//! }
//! ```
//!
//! For `ivf` each entry lists an infrared and a visible image, for `mef`
//! the exposures of one stack. Multiple files in `inputs` or `reference`
//! are concatenated along channels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::MmfSample;
use crate::error::{Error, Result};
use crate::imaging::{load_image, ImagePlane, ImageStack};
use crate::task::Task;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub inputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: Task,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    /// Reads `path`, or `path/manifest.json` when `path` is a directory,
    /// and checks that every entry fits the task. Also returns the
    /// directory that entry paths are relative to.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let (manifest, root) = Self::read(path)?;
        manifest.validate()?;
        Ok((manifest, root))
    }

    /// [`DatasetManifest::load`] without the per-task entry check.
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Data("manifest lists no entries".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let ok = match self.task {
                Task::Ivf => e.inputs.len() == 2,
                Task::Mef => e.inputs.len() >= 2,
                Task::Mmf => !e.inputs.is_empty() && e.guide.is_some() && !e.reference.is_empty(),
            };
            if !ok {
                return Err(Error::Data(format!(
                    "manifest entry {i} does not fit a {} dataset",
                    self.task
                )));
            }
        }
        Ok(())
    }
}

fn load_all(root: &Path, paths: &[PathBuf]) -> Result<Vec<ImagePlane>> {
    paths.iter().map(|p| load_image(root.join(p))).collect()
}

/// Channels of several images stacked into one tensor.
pub fn load_channels(root: &Path, paths: &[PathBuf]) -> Result<Tensor<f32>> {
    let planes = load_all(root, paths)?;
    let parts: Vec<Tensor<f32>> = planes.into_iter().map(ImagePlane::into_pixels).collect();
    Tensor::concat_channels(&parts).map_err(|e| Error::Data(e.to_string()))
}

/// Luma planes of every infrared and visible image.
pub fn load_ivf_images(manifest: &DatasetManifest, root: &Path) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        for p in load_all(root, &e.inputs)? {
            out.push(p.luma()?.into_pixels());
        }
    }
    Ok(out)
}

pub fn load_exposure_stacks(manifest: &DatasetManifest, root: &Path) -> Result<Vec<ImageStack>> {
    manifest
        .entries
        .iter()
        .map(|e| ImageStack::new(load_all(root, &e.inputs)?).map_err(|err| Error::Data(err.to_string())))
        .collect()
}

pub fn load_mmf_samples(manifest: &DatasetManifest, root: &Path) -> Result<Vec<MmfSample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let guide = e.guide.as_ref().expect("validated");
            Ok(MmfSample {
                lr: load_channels(root, &e.inputs)?,
                guide: load_image(root.join(guide))?.into_pixels(),
                reference: load_channels(root, &e.reference)?,
            })
        })
        .collect()
}
