//! Run manifests: a config snapshot plus content hashes of inputs and an
//! artifact index. A manifest fully determines a run; replaying it must
//! reproduce every artifact byte for byte, so nothing time- or
//! machine-dependent is recorded.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusConfig;
use crate::error::{LabError, Result};
use crate::model::{HeadId, ModelConfig};
use crate::selection::SelectionConfig;
use crate::train::TrainConfig;

pub const MANIFEST_FORMAT: &str = "mudaf-lab-run-v1";

/// Where the starting weights came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitSpec {
    /// Fresh random init derived from the master seed.
    Fresh,
    /// An existing checkpoint directory; its blob hash pins the weights.
    Checkpoint { path: String, blob_sha256: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSnapshot {
    pub mode: String,
    pub master_seed: u64,
    pub corpus_config: CorpusConfig,
    pub model_config: ModelConfig,
    /// Training config with the resolved target-head set baked in.
    pub train_config: TrainConfig,
    /// Recorded when heads were auto-selected, for provenance.
    pub selection: Option<SelectionConfig>,
    pub target_heads: Vec<HeadId>,
    pub dataset_path: String,
    pub dataset_sha256: String,
    pub init: InitSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub experiment: ExperimentSnapshot,
    pub artifacts: Vec<ArtifactEntry>,
}

impl RunManifest {
    pub fn new(experiment: ExperimentSnapshot) -> Self {
        RunManifest { format: MANIFEST_FORMAT.into(), experiment, artifacts: Vec::new() }
    }

    /// Hashes and records an artifact living under `run_dir`.
    pub fn record_artifact(&mut self, run_dir: &Path, rel: &str) -> Result<()> {
        let full = run_dir.join(rel);
        self.artifacts.push(ArtifactEntry { path: rel.into(), sha256: sha256_file(&full)? });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| LabError::Format(e.to_string()))?;
        fs::write(path, json).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| LabError::Format(e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(LabError::Format(format!(
                "unsupported run manifest format '{}'",
                manifest.format
            )));
        }
        Ok(manifest)
    }

    /// Checks that every listed artifact exists with a matching checksum.
    pub fn verify_artifacts(&self, run_dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let digest = sha256_file(&run_dir.join(&a.path))?;
            if digest != a.sha256 {
                return Err(LabError::Checkpoint(format!(
                    "artifact {} checksum mismatch: recorded {}, found {digest}",
                    a.path, a.sha256
                )));
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exclusive per-run-directory lock; one mutating command at a time.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(LabError::Usage(
                format!("run directory is locked by another command ({})", path.display()),
            )),
            Err(e) => Err(LabError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
