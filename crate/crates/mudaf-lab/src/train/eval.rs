//! Greedy-decode QA evaluation: exact match and token-overlap F1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::MdqaSample;
use crate::error::{LabError, Result};
use crate::model::{HeadId, Model};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QaMetrics {
    /// Fraction of samples whose decoded answer equals the gold answer.
    pub exact_match: f64,
    /// Mean bag-of-tokens F1 between decoded and gold answers.
    pub token_f1: f64,
    pub n: usize,
}

/// Bag-of-tokens overlap F1; 0 when either side is empty.
pub fn token_overlap_f1(pred: &[u32], gold: &[u32]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: std::collections::HashMap<u32, isize> = Default::default();
    for &t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0isize;
    for &t in pred {
        let c = counts.entry(t).or_default();
        if *c > 0 {
            overlap += 1;
            *c -= 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Greedy-decodes each sample from its answer cue and scores the result
/// against the gold answer tokens.
pub fn evaluate_qa(
    model: &Model,
    samples: &[MdqaSample],
    masked_heads: &BTreeSet<HeadId>,
    eos: u32,
) -> Result<QaMetrics> {
    if samples.is_empty() {
        return Err(LabError::Usage("evaluate_qa needs a nonempty evaluation set".into()));
    }
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    for sample in samples {
        let prompt = &sample.layout.tokens[..sample.layout.answer_span.0];
        let cap = sample.answer.len() + 2;
        let decoded = model.greedy_decode(prompt, cap, eos, masked_heads)?;
        if decoded == sample.answer {
            em_sum += 1.0;
        }
        f1_sum += token_overlap_f1(&decoded, &sample.answer);
    }
    let n = samples.len();
    Ok(QaMetrics { exact_match: em_sum / n as f64, token_f1: f1_sum / n as f64, n })
}
