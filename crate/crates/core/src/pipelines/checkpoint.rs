//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CSCF"                    magic
//! u32                       format version
//! u32 + bytes               model kind ("ivf", "mef", "mmf")
//! u32 + bytes               configuration echo (JSON)
//! u32                       tensor count
//!   u32 + bytes             name
//!   4 × u32                 shape (n, c, h, w)
//!   numel × f32             values
//! [u8; 32]                  SHA-256 of everything above
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::models::{IvfnConfig, IvfnModel, MefnConfig, MefnModel, MmfnConfig, MmfnModel};
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::task::Task;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"CSCF";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A model that can be stored in and restored from a [`Checkpoint`].
pub trait FusionModel: Parameterized<f32> + Clone + Sized {
    const TASK: Task;
    type Config: Serialize + DeserializeOwned + Clone;

    fn config(&self) -> &Self::Config;

    /// A freshly initialised model with the given structure.
    fn build(config: &Self::Config, seed: u64) -> Result<Self>;
}

impl FusionModel for IvfnModel {
    const TASK: Task = Task::Ivf;
    type Config = IvfnConfig;

    fn config(&self) -> &IvfnConfig {
        &self.config
    }

    fn build(config: &IvfnConfig, seed: u64) -> Result<Self> {
        IvfnModel::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

impl FusionModel for MefnModel {
    const TASK: Task = Task::Mef;
    type Config = MefnConfig;

    fn config(&self) -> &MefnConfig {
        &self.config
    }

    fn build(config: &MefnConfig, seed: u64) -> Result<Self> {
        MefnModel::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

impl FusionModel for MmfnModel {
    const TASK: Task = Task::Mmf;
    type Config = MmfnConfig;

    fn config(&self) -> &MmfnConfig {
        &self.config
    }

    fn build(config: &MmfnConfig, seed: u64) -> Result<Self> {
        MmfnModel::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Model kind, configuration echo, and every named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: Task,
    /// JSON object with a `model` entry and, for trained models, a `train`
    /// entry, stored verbatim.
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot of `model`, optionally echoing the training configuration.
    pub fn from_model<M: FusionModel>(model: &M, train: Option<serde_json::Value>) -> Result<Self> {
        let echo = serde_json::json!({
            "model": serde_json::to_value(model.config()).map_err(|e| Error::Config(e.to_string()))?,
            "train": train,
        });
        Ok(Checkpoint {
            kind: M::TASK,
            config: echo.to_string(),
            tensors: model.all_named().into_iter().map(|(n, t, _)| (n, t)).collect(),
        })
    }

    /// Restores a model, rejecting a different kind or any mismatch between
    /// stored tensors and the model structure.
    pub fn to_model<M: FusionModel>(&self) -> Result<M> {
        if self.kind != M::TASK {
            return Err(Error::KindMismatch {
                found: self.kind.to_string(),
                expected: M::TASK.to_string(),
            });
        }
        let echo: serde_json::Value =
            serde_json::from_str(&self.config).map_err(|e| Error::Integrity(e.to_string()))?;
        let cfg: M::Config = serde_json::from_value(echo.get("model").cloned().unwrap_or_default())
            .map_err(|e| Error::Integrity(format!("model configuration: {e}")))?;
        let mut model = M::build(&cfg, 0)?;
        let expected = model.all_named();
        if expected.len() != self.tensors.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, want, _), (got_name, got)) in expected.iter().zip(&self.tensors) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {got_name} {} does not match model tensor {name} {}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        let mut values = self.tensors.iter();
        model.visit_mut("", &mut |_, t, _| {
            *t = values.next().expect("counts checked").1.clone();
        });
        Ok(model)
    }

    /// Training configuration echo, if present.
    pub fn train_config(&self) -> Option<serde_json::Value> {
        serde_json::from_str::<serde_json::Value>(&self.config)
            .ok()
            .and_then(|v| v.get("train").cloned())
            .filter(|v| !v.is_null())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, self.kind.as_str());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            for d in t.shape().as_array() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Integrity(
                "not a checkpoint file (bad magic or too short)".into(),
            ));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("content digest does not match".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let kind: Task = r
            .string()?
            .parse()
            .map_err(|_| Error::Integrity("unknown model kind".into()))?;
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let d = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
            let shape = Shape::new(d[0], d[1], d[2], d[3]);
            let raw = r.take(
                shape
                    .numel()
                    .checked_mul(4)
                    .ok_or_else(|| Error::Integrity("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint { kind, config, tensors })
    }

    /// Hex SHA-256 of the encoded checkpoint body.
    pub fn digest(&self) -> String {
        let bytes = self.to_bytes();
        bytes[bytes.len() - DIGEST_LEN..]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity("checkpoint is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("name is not UTF-8".into()))
    }
}

pub fn save_checkpoint<M: FusionModel>(model: &M, path: &Path) -> Result<()> {
    Checkpoint::from_model(model, None)?.save(path)
}

pub fn load_checkpoint<M: FusionModel>(path: &Path) -> Result<M> {
    Checkpoint::load(path)?.to_model()
}
