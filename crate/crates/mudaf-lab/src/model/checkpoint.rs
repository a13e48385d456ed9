//! Checkpoint persistence: a JSON manifest (config, tensor index, checksum)
//! next to one little-endian f32 binary blob.
//!
//! Weights are held in f64 in memory and down-cast to f32 on save; loading
//! up-casts losslessly, so save→load→save reproduces both files byte for
//! byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LayerWeights, Model, ModelConfig};
use crate::error::{LabError, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";
const FORMAT: &str = "mudaf-lab-checkpoint-v1";

/// A model plus the training bookkeeping needed to resume or replay.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// Completed optimizer steps.
    pub step: u64,
    /// Master seed of the run that produced these weights; per-step RNG
    /// streams are derived from `(master_seed, step)`, so this is the full
    /// RNG state.
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    step: u64,
    master_seed: u64,
    blob: String,
    blob_sha256: String,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(model: Model, step: u64, master_seed: u64) -> Self {
        Checkpoint { model, step, master_seed }
    }

    /// Writes `manifest.json` and `weights.bin` into `dir` (created if
    /// missing).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        let mut blob: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0usize;
        for (name, t) in self.model.named_tensors() {
            for &v in t.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                len: t.numel(),
            });
            offset += t.numel();
        }
        let digest = hex::encode(Sha256::digest(&blob));
        let manifest = Manifest {
            format: FORMAT.into(),
            config: self.model.config().clone(),
            step: self.step,
            master_seed: self.master_seed,
            blob: BLOB_FILE.into(),
            blob_sha256: digest,
            tensors,
        };
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, &blob).map_err(|e| LabError::io(&blob_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| LabError::Format(e.to_string()))?;
        fs::write(&manifest_path, json).map_err(|e| LabError::io(&manifest_path, e))?;
        Ok(())
    }

    /// Loads and verifies a checkpoint directory: checksum must match the
    /// blob and every tensor shape must match the config.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let json =
            fs::read_to_string(&manifest_path).map_err(|e| LabError::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&json).map_err(|e| LabError::Format(e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(LabError::Checkpoint(format!(
                "unsupported checkpoint format '{}'",
                manifest.format
            )));
        }
        let blob_path = dir.join(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|e| LabError::io(&blob_path, e))?;
        let digest = hex::encode(Sha256::digest(&blob));
        if digest != manifest.blob_sha256 {
            return Err(LabError::Checkpoint(format!(
                "blob checksum mismatch: manifest {} vs blob {digest}",
                manifest.blob_sha256
            )));
        }
        if blob.len() % 4 != 0 {
            return Err(LabError::Checkpoint("blob length is not a multiple of 4".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();

        let read_tensor = |name: &str| -> Result<Tensor> {
            let entry = manifest
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| LabError::Checkpoint(format!("manifest lacks tensor {name}")))?;
            if entry.offset + entry.len > values.len() {
                return Err(LabError::Checkpoint(format!(
                    "tensor {name} extends past the blob"
                )));
            }
            Tensor::new(
                entry.shape.clone(),
                values[entry.offset..entry.offset + entry.len].to_vec(),
            )
        };

        let tok_emb = read_tensor("tok_emb")?;
        let mut layers = Vec::with_capacity(manifest.config.n_layers);
        for i in 0..manifest.config.n_layers {
            layers.push(LayerWeights {
                attn_norm: read_tensor(&format!("layers.{i}.attn_norm"))?,
                wq: read_tensor(&format!("layers.{i}.wq"))?,
                wk: read_tensor(&format!("layers.{i}.wk"))?,
                wv: read_tensor(&format!("layers.{i}.wv"))?,
                wo: read_tensor(&format!("layers.{i}.wo"))?,
                mlp_norm: read_tensor(&format!("layers.{i}.mlp_norm"))?,
                w_gate: read_tensor(&format!("layers.{i}.w_gate"))?,
                w_up: read_tensor(&format!("layers.{i}.w_up"))?,
                w_down: read_tensor(&format!("layers.{i}.w_down"))?,
            });
        }
        let final_norm = read_tensor("final_norm")?;
        let lm_head = read_tensor("lm_head")?;
        let model =
            Model::from_parts(manifest.config, tok_emb, layers, final_norm, lm_head)?;
        Ok(Checkpoint { model, step: manifest.step, master_seed: manifest.master_seed })
    }
}
