//! Per-head retrieval scoring: passage attention mass, attended sets,
//! F1/EM retrieval scores, dataset aggregates and head rankings.
//!
//! A head's retrieval score is the mean F1 of its attended passage set
//! against the golden passages over an evaluation set; EM asks whether the
//! top-|golden| passages by attention mass are exactly the golden ones.

pub mod export;
pub mod masking;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{MdqaSample, PromptLayout};
use crate::error::{LabError, Result};
use crate::model::{AttentionTrace, ForwardOptions, HeadId, Model, TraceRequest};

/// Default attended-passage threshold: the uniform share of the default
/// 10-passage layout, so "attended" means above-uniform attention.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Share of heads counted as retrieval heads when a fraction is requested.
pub const DEFAULT_TOP_FRACTION: f64 = 0.05;

/// Which token's attention row is attributed over passages.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionToken {
    /// The final input token (the answer-cue token); scoring default.
    PromptLast,
    /// The final token of the question text; training default.
    QuestionLast,
}

impl AttributionToken {
    pub fn index(&self, layout: &PromptLayout) -> usize {
        match self {
            AttributionToken::PromptLast => layout.prompt_last_token_index,
            AttributionToken::QuestionLast => layout.question_last_token_index,
        }
    }
}

/// One head's attention mass per passage at the attribution token.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PassageAttention {
    pub head: HeadId,
    /// Summed attention over each passage span.
    pub weights: Vec<f64>,
    /// Attention on non-passage tokens.
    pub residual_mass: f64,
}

/// Sums the query token's attention row over each passage span; the
/// residual is the mass on every other visible position.
pub fn passage_attention_mass(
    trace: &AttentionTrace,
    layout: &PromptLayout,
) -> Result<PassageAttention> {
    let visible = trace.query_token_index + 1;
    let mut weights = Vec::with_capacity(layout.passage_spans.len());
    let mut covered = 0.0;
    for &(start, end) in &layout.passage_spans {
        if end > visible {
            return Err(LabError::Usage(format!(
                "passage span {start}..{end} outside trace range 0..{visible}"
            )));
        }
        let w: f64 = trace.attn_row[start..end].iter().sum();
        covered += w;
        weights.push(w);
    }
    let total: f64 = trace.attn_row[..visible.min(trace.attn_row.len())].iter().sum();
    let residual_mass = total - covered;
    Ok(PassageAttention { head: trace.head, weights, residual_mass })
}

/// Passages whose attention mass strictly exceeds `epsilon`.
pub fn attended_set(pa: &PassageAttention, epsilon: f64) -> BTreeSet<usize> {
    pa.weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > epsilon)
        .map(|(k, _)| k)
        .collect()
}

/// Harmonic mean of precision and recall of `attended` against `golden`;
/// zero when the attended set is empty or disjoint from the golden set.
pub fn f1_retrieval(golden: &BTreeSet<usize>, attended: &BTreeSet<usize>) -> Result<f64> {
    if golden.is_empty() {
        return Err(LabError::Usage("f1_retrieval needs a nonempty golden set".into()));
    }
    let hit = golden.intersection(attended).count() as f64;
    if attended.is_empty() || hit == 0.0 {
        return Ok(0.0);
    }
    let precision = hit / attended.len() as f64;
    let recall = hit / golden.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Exact-match retrieval: 1 iff the top-|golden| passages by attention mass
/// (ties broken toward lower passage index) are exactly the golden set.
pub fn em_retrieval(pa: &PassageAttention, golden: &BTreeSet<usize>) -> Result<bool> {
    if golden.is_empty() {
        return Err(LabError::Usage("em_retrieval needs a nonempty golden set".into()));
    }
    if golden.len() > pa.weights.len() {
        return Err(LabError::Usage(format!(
            "golden set of {} exceeds {} passages",
            golden.len(),
            pa.weights.len()
        )));
    }
    let mut order: Vec<usize> = (0..pa.weights.len()).collect();
    order.sort_by(|&a, &b| {
        pa.weights[b].partial_cmp(&pa.weights[a]).unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top: BTreeSet<usize> = order[..golden.len()].iter().copied().collect();
    Ok(&top == golden)
}

/// One head's aggregated scores over an evaluation set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadScore {
    pub head: HeadId,
    pub f1: f64,
    pub em: f64,
    /// 1-based rank by descending F1, ties toward lower (layer, head).
    pub rank: usize,
}

/// Per-head F1/EM retrieval scores with ranks and the analysis config that
/// produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadScoreTable {
    pub epsilon: f64,
    pub eval_id: String,
    /// Entries ordered by (layer, head).
    pub entries: Vec<HeadScore>,
}

impl HeadScoreTable {
    pub fn get(&self, head: HeadId) -> Option<&HeadScore> {
        self.entries.iter().find(|e| e.head == head)
    }

    /// Entries sorted by rank (best first).
    pub fn ranked(&self) -> Vec<&HeadScore> {
        let mut v: Vec<&HeadScore> = self.entries.iter().collect();
        v.sort_by_key(|e| e.rank);
        v
    }

    /// The `k` best heads by rank.
    pub fn top_heads(&self, k: usize) -> Vec<HeadId> {
        self.ranked().into_iter().take(k).map(|e| e.head).collect()
    }

    pub fn mean_f1_of(&self, heads: &[HeadId]) -> f64 {
        if heads.is_empty() {
            return 0.0;
        }
        let sum: f64 =
            heads.iter().filter_map(|&h| self.get(h)).map(|e| e.f1).sum();
        sum / heads.len() as f64
    }
}

/// Arithmetic per-head means over per-sample (F1, EM) results, with ranks
/// assigned by descending F1 and (layer, head) tiebreak.
pub fn aggregate_scores(
    per_sample: &[Vec<(HeadId, f64, bool)>],
    epsilon: f64,
    eval_id: &str,
) -> Result<HeadScoreTable> {
    if per_sample.is_empty() {
        return Err(LabError::Usage("aggregate_scores needs at least one sample".into()));
    }
    let mut totals: std::collections::BTreeMap<HeadId, (f64, f64, usize)> = Default::default();
    for sample in per_sample {
        for &(head, f1, em) in sample {
            let t = totals.entry(head).or_insert((0.0, 0.0, 0));
            t.0 += f1;
            t.1 += if em { 1.0 } else { 0.0 };
            t.2 += 1;
        }
    }
    let mut entries: Vec<HeadScore> = totals
        .into_iter()
        .map(|(head, (f1, em, n))| HeadScore {
            head,
            f1: f1 / n as f64,
            em: em / n as f64,
            rank: 0,
        })
        .collect();
    let mut by_f1: Vec<usize> = (0..entries.len()).collect();
    by_f1.sort_by(|&a, &b| {
        entries[b].f1.partial_cmp(&entries[a].f1).unwrap_or(std::cmp::Ordering::Equal)
            .then(entries[a].head.cmp(&entries[b].head))
    });
    for (rank0, &idx) in by_f1.iter().enumerate() {
        entries[idx].rank = rank0 + 1;
    }
    Ok(HeadScoreTable { epsilon, eval_id: eval_id.into(), entries })
}

/// Scores every head of `model` over an evaluation set: one traced forward
/// per sample at the attribution token, then per-head mass → attended set
/// → F1/EM, averaged by [`aggregate_scores`].
pub fn score_heads(
    model: &Model,
    samples: &[MdqaSample],
    epsilon: f64,
    attribution: AttributionToken,
    eval_id: &str,
) -> Result<HeadScoreTable> {
    if samples.is_empty() {
        return Err(LabError::Usage("score_heads needs a nonempty evaluation set".into()));
    }
    let heads = model.config().all_heads();
    let mut per_sample = Vec::with_capacity(samples.len());
    for sample in samples {
        let qi = attribution.index(&sample.layout);
        let opts = ForwardOptions {
            traces: heads.iter().map(|&head| TraceRequest { head, query_index: qi }).collect(),
            ..Default::default()
        };
        let (_, traces) = model.forward(&sample.layout.tokens, &opts)?;
        let mut rows = Vec::with_capacity(traces.len());
        for trace in &traces {
            let pa = passage_attention_mass(trace, &sample.layout)?;
            let attended = attended_set(&pa, epsilon);
            let f1 = f1_retrieval(&sample.golden_indices, &attended)?;
            let em = em_retrieval(&pa, &sample.golden_indices)?;
            rows.push((trace.head, f1, em));
        }
        per_sample.push(rows);
    }
    aggregate_scores(&per_sample, epsilon, eval_id)
}
