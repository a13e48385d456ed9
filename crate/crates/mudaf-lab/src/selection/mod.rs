//! Target-head selection for contrastive optimization: softmax-weighted
//! random sampling over retrieval scores, greedy top-k, and deliberate
//! weak-head selection.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::HeadScoreTable;
use crate::error::{LabError, Result};
use crate::model::HeadId;

/// Heads below this F1 count as weak.
pub const WEAK_HEAD_F1_BOUND: f64 = 0.1;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Softmax-weighted sampling without replacement over retrieval scores.
    Weighted,
    /// Top-k by rank; known to be less robust, kept for head-count sweeps.
    Greedy,
    /// Uniformly among heads with F1 below [`WEAK_HEAD_F1_BOUND`].
    Weak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Selection temperature; smaller concentrates on the strongest heads.
    pub temperature: f64,
    /// Number of heads to select.
    pub k: usize,
    pub mode: SelectionMode,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { temperature: 0.05, k: 8, mode: SelectionMode::Weighted, seed: 0 }
    }
}

impl SelectionConfig {
    pub fn validate(&self, total_heads: usize) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(LabError::Config("selection temperature must be positive".into()));
        }
        if self.k == 0 || self.k > total_heads {
            return Err(LabError::Config(format!(
                "k {} out of range for {total_heads} heads",
                self.k
            )));
        }
        Ok(())
    }
}

/// `P(h) = exp(R_h / tau) / sum_h' exp(R_h' / tau)` over F1 retrieval
/// scores, in the table's (layer, head) order.
pub fn selection_distribution(
    table: &HeadScoreTable,
    temperature: f64,
) -> Result<Vec<(HeadId, f64)>> {
    if temperature <= 0.0 {
        return Err(LabError::Config("selection temperature must be positive".into()));
    }
    if table.entries.is_empty() {
        return Err(LabError::Usage("selection needs a nonempty score table".into()));
    }
    let max = table.entries.iter().map(|e| e.f1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> =
        table.entries.iter().map(|e| ((e.f1 - max) / temperature).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(table
        .entries
        .iter()
        .zip(weights.iter())
        .map(|(e, &w)| (e.head, w / z))
        .collect())
}

/// Draws `k` distinct heads by sequential softmax sampling without
/// replacement (weights renormalize implicitly after each draw).
pub fn sample_heads(table: &HeadScoreTable, config: &SelectionConfig) -> Result<Vec<HeadId>> {
    config.validate(table.entries.len())?;
    let dist = selection_distribution(table, config.temperature)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut remaining: Vec<(HeadId, f64)> = dist;
    let mut picked = Vec::with_capacity(config.k);
    for _ in 0..config.k {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = remaining.len() - 1;
        for (i, (_, w)) in remaining.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= w;
        }
        picked.push(remaining.remove(chosen).0);
    }
    Ok(picked)
}

/// Top-k heads by rank (descending F1).
pub fn greedy_heads(table: &HeadScoreTable, k: usize) -> Result<Vec<HeadId>> {
    if k == 0 || k > table.entries.len() {
        return Err(LabError::Config(format!(
            "k {k} out of range for {} heads",
            table.entries.len()
        )));
    }
    Ok(table.top_heads(k))
}

/// `k` heads drawn uniformly among those with F1 below the weak bound.
pub fn weak_heads(table: &HeadScoreTable, k: usize, seed: u64) -> Result<Vec<HeadId>> {
    let mut candidates: Vec<HeadId> = table
        .entries
        .iter()
        .filter(|e| e.f1 < WEAK_HEAD_F1_BOUND)
        .map(|e| e.head)
        .collect();
    if candidates.len() < k {
        return Err(LabError::Selection(format!(
            "only {} heads have F1 below {WEAK_HEAD_F1_BOUND}, need {k}",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = candidates.len();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        candidates.swap(i, j);
    }
    candidates.truncate(k);
    Ok(candidates)
}

/// Dispatches on the configured mode.
pub fn select(table: &HeadScoreTable, config: &SelectionConfig) -> Result<Vec<HeadId>> {
    match config.mode {
        SelectionMode::Weighted => sample_heads(table, config),
        SelectionMode::Greedy => greedy_heads(table, config.k),
        SelectionMode::Weak => weak_heads(table, config.k, config.seed),
    }
}

/// Head sets persist as a JSON list of `{layer, head}` records.
pub fn save_head_set(heads: &[HeadId], path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(heads).map_err(|e| LabError::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| LabError::io(path, e))
}

pub fn load_head_set(path: &Path) -> Result<Vec<HeadId>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Format(e.to_string()))
}
