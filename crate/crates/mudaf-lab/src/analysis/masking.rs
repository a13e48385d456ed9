//! Head-masking ablations: QA accuracy with top-k retrieval heads, k random
//! heads, or k NIAH-proxy heads zeroed out, against the unmasked baseline.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HeadScoreTable;
use crate::corpus::MdqaSample;
use crate::derive_seed;
use crate::error::{LabError, Result};
use crate::model::{HeadId, Model};
use crate::train::evaluate_qa;

/// One evaluation under one masked head set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskingRun {
    /// Seed for randomly drawn sets; absent for deterministic conditions.
    pub seed: Option<u64>,
    pub masked: Vec<HeadId>,
    pub exact_match: f64,
    pub token_f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskingCondition {
    pub name: String,
    pub runs: Vec<MaskingRun>,
    pub mean_exact_match: f64,
    pub mean_token_f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskingReport {
    pub k: usize,
    pub repeats: usize,
    pub baseline: MaskingRun,
    pub conditions: Vec<MaskingCondition>,
}

/// Which head sets to compare. Random sets are always drawn; top/NIAH
/// conditions run when their score tables are supplied.
pub struct MaskingSpec<'a> {
    pub k: usize,
    /// Independent random-set draws to average over.
    pub repeats: usize,
    pub seed: u64,
    pub top_scores: Option<&'a HeadScoreTable>,
    pub niah_scores: Option<&'a HeadScoreTable>,
}

impl MaskingReport {
    pub fn condition(&self, name: &str) -> Option<&MaskingCondition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Runs the masking comparison on a frozen model.
pub fn masking_experiment(
    model: &Model,
    eval_set: &[MdqaSample],
    spec: &MaskingSpec<'_>,
    eos: u32,
) -> Result<MaskingReport> {
    let total_heads = model.config().total_heads();
    if spec.k > total_heads {
        return Err(LabError::Config(format!(
            "k {} exceeds the {total_heads} heads of the model",
            spec.k
        )));
    }

    let eval_masked = |masked: &[HeadId], seed: Option<u64>| -> Result<MaskingRun> {
        let set: BTreeSet<HeadId> = masked.iter().copied().collect();
        let m = evaluate_qa(model, eval_set, &set, eos)?;
        Ok(MaskingRun {
            seed,
            masked: masked.to_vec(),
            exact_match: m.exact_match,
            token_f1: m.token_f1,
        })
    };

    let baseline = eval_masked(&[], None)?;
    let mut conditions = Vec::new();

    if let Some(table) = spec.top_scores {
        let heads = table.top_heads(spec.k);
        let run = eval_masked(&heads, None)?;
        conditions.push(condition("top", vec![run]));
    }

    // repeats == 0 skips the random condition entirely.
    if spec.repeats > 0 {
        let mut random_runs = Vec::with_capacity(spec.repeats);
        for r in 0..spec.repeats {
            let seed = derive_seed(spec.seed, r as u64);
            let heads = random_heads(model, spec.k, seed);
            random_runs.push(eval_masked(&heads, Some(seed))?);
        }
        conditions.push(condition("random", random_runs));
    }

    if let Some(table) = spec.niah_scores {
        let heads = table.top_heads(spec.k);
        let run = eval_masked(&heads, None)?;
        conditions.push(condition("niah-proxy", vec![run]));
    }

    Ok(MaskingReport { k: spec.k, repeats: spec.repeats, baseline, conditions })
}

fn condition(name: &str, runs: Vec<MaskingRun>) -> MaskingCondition {
    let n = runs.len().max(1) as f64;
    let mean_exact_match = runs.iter().map(|r| r.exact_match).sum::<f64>() / n;
    let mean_token_f1 = runs.iter().map(|r| r.token_f1).sum::<f64>() / n;
    MaskingCondition { name: name.into(), runs, mean_exact_match, mean_token_f1 }
}

/// `k` distinct heads drawn uniformly from all heads.
pub fn random_heads(model: &Model, k: usize, seed: u64) -> Vec<HeadId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heads = model.config().all_heads();
    let n = heads.len();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        heads.swap(i, j);
    }
    heads.truncate(k);
    heads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusConfig};
    use crate::model::ModelConfig;

    #[test]
    fn zero_k_matches_the_baseline_exactly() {
        let corpus = Corpus::new(CorpusConfig {
            n_passages: 2,
            ..CorpusConfig::default()
        })
        .unwrap();
        let eval = corpus.generate_many(3, 1).unwrap();
        let model = Model::new_random(ModelConfig::micro(corpus.vocab().size()), 2).unwrap();
        let spec = MaskingSpec { k: 0, repeats: 2, seed: 7, top_scores: None, niah_scores: None };
        let report = masking_experiment(&model, &eval, &spec, corpus.vocab().eos_id()).unwrap();
        let random = report.condition("random").unwrap();
        for run in &random.runs {
            assert_eq!(run.exact_match, report.baseline.exact_match);
            assert!(run.masked.is_empty());
        }
    }

    #[test]
    fn random_sets_are_distinct_per_seed_and_recorded() {
        let model = Model::new_random(ModelConfig::micro(30), 2).unwrap();
        let a = random_heads(&model, 4, 1);
        let b = random_heads(&model, 4, 2);
        assert_eq!(a.len(), 4);
        assert_eq!(a, random_heads(&model, 4, 1));
        assert_ne!(a, b);
        let distinct: BTreeSet<HeadId> = a.iter().copied().collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn oversized_k_is_a_config_error() {
        let corpus = Corpus::new(CorpusConfig {
            n_passages: 2,
            ..CorpusConfig::default()
        })
        .unwrap();
        let eval = corpus.generate_many(1, 1).unwrap();
        let model = Model::new_random(ModelConfig::micro(corpus.vocab().size()), 2).unwrap();
        let spec =
            MaskingSpec { k: 1000, repeats: 1, seed: 0, top_scores: None, niah_scores: None };
        let err =
            masking_experiment(&model, &eval, &spec, corpus.vocab().eos_id()).unwrap_err();
        assert_eq!(err.class(), "config");
    }
}
