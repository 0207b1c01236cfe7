//! Checkpoint file: 16-byte header (magic, version, manifest length, reserved), a JSON manifest,
//! then little-endian `f32` blobs in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::TensorSpec;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::train::{EpochMetrics, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 16;

/// Adam moments at single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub dataset_fingerprint: String,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: Option<OptimizerState>,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    dataset_fingerprint: String,
    epoch: usize,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorSpec>,
    blobs: Vec<String>,
    metrics: Vec<EpochMetrics>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_f32(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs = vec!["params".to_string()];
        if self.optimizer.is_some() {
            blobs.extend(["adam_m".to_string(), "adam_v".to_string()]);
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            model: self.model.config.clone(),
            train: self.train.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            epoch: self.epoch,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors: self.model.layout.tensors.clone(),
            blobs,
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let n = self.model.params.len();
        let mut out = Vec::with_capacity(HEADER + json.len() + 12 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&json);
        put_f32(&mut out, &self.model.params);
        if let Some(o) = &self.optimizer {
            put_f32(&mut out, &o.m);
            put_f32(&mut out, &o.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let json_len = word(8) as usize;
        let body = &bytes[HEADER..];
        if body.len() < json_len {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..json_len])?;
        if manifest.format_version != version {
            return Err(bad("manifest version disagrees with header"));
        }
        let model = Model::zeros(manifest.model.clone())?;
        if manifest.tensors != model.layout.tensors {
            return Err(bad("tensor shapes do not match the model configuration"));
        }
        let n = model.layout.len;
        let expected: Vec<&str> = match manifest.optimizer_step {
            Some(_) => vec!["params", "adam_m", "adam_v"],
            None => vec!["params"],
        };
        if manifest.blobs != expected {
            return Err(bad(format!("unexpected blob list {:?}", manifest.blobs)));
        }
        let data = &body[json_len..];
        if data.len() != 4 * n * expected.len() {
            return Err(bad(format!("expected {} blob bytes, found {}", 4 * n * expected.len(), data.len())));
        }
        let blob = |k: usize| -> Vec<f64> {
            data[4 * n * k..4 * n * (k + 1)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        };
        let model = model.with_params(blob(0))?;
        let optimizer = manifest.optimizer_step.map(|step| OptimizerState { step, m: blob(1), v: blob(2) });
        Ok(Self {
            model,
            train: manifest.train,
            dataset_fingerprint: manifest.dataset_fingerprint,
            epoch: manifest.epoch,
            optimizer,
            metrics: manifest.metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copy without optimizer state, for inference-only distribution.
    pub fn weights_only(&self) -> Self {
        Self { optimizer: None, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { input_resolution: 16, channels: [2, 2, 2, 2], latent_dim: 4, decoder_hidden: 4, view_hidden: 3, max_offset: 0.75 };
        let model = Model::new(cfg, 5).unwrap();
        let n = model.params.len();
        Checkpoint {
            model,
            train: TrainConfig::default(),
            dataset_fingerprint: "abc".into(),
            epoch: 3,
            optimizer: Some(OptimizerState { step: 12, m: vec![0.25; n], v: vec![0.5; n] }),
            metrics: vec![EpochMetrics { epoch: 1, lr: 1e-4, total: 1.0, ms: 0.5, r: 0.1, clip: 0.2, v: 30.0 }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SFCK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.params, c.model.params);
        assert_eq!(back.optimizer, c.optimizer);
        assert_eq!(back.metrics, c.metrics);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let lean = Checkpoint::from_bytes(&c.weights_only().to_bytes().unwrap()).unwrap();
        assert!(lean.optimizer.is_none());
    }

    #[test]
    fn rejects_version_and_shape_mismatch() {
        let bytes = sample().to_bytes().unwrap();
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        // Same-length edit of the manifest: shapes no longer match the configuration.
        let key = b"\"latent_dim\":4";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        let mut edited = bytes.clone();
        edited[at + key.len() - 1] = b'5';
        assert!(matches!(Checkpoint::from_bytes(&edited), Err(Error::Checkpoint(m)) if m.contains("shapes")));
    }
}
