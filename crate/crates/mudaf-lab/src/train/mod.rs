//! Joint training objective: causal LM loss on answer tokens plus a
//! head-level contrastive loss that pulls the question's query projection
//! toward the pooled key projection of the golden passage and pushes it
//! away from every other passage.
//!
//! The contrastive term for one sample is
//! `-log( exp(sim(q, K_golden)/tau) / sum_j exp(sim(q, K_j)/tau) )`
//! with cosine similarity, either on features concatenated across the
//! selected heads (default) or summed per head. The total objective is
//! `clm + lambda * con`.

pub mod eval;
pub mod optim;
pub mod trainer;

pub use eval::{evaluate_qa, token_overlap_f1, QaMetrics};
pub use optim::{AdamW, LrSchedule};
pub use trainer::{train_run, StepMetrics, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::corpus::PromptLayout;
use crate::error::{LabError, Result};
use crate::model::{AttentionTrace, HeadId};
use crate::tensor::{Tape, Tensor, Var};

/// Reference optimizer settings for the full-scale recipe. The desk-scale
/// defaults below train from scratch and need a larger rate.
pub const PAPER_LR: f64 = 5e-6;
pub const PAPER_BETA1: f64 = 0.9;
pub const PAPER_BETA2: f64 = 0.999;

/// How per-head features enter the similarity.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// One similarity on features concatenated across all selected heads;
    /// more stable than per-head sums.
    Concatenated,
    /// The literal per-head sum of contrastive terms.
    PerHead,
}

/// Which positions the CLM loss supervises.
///
/// Training from scratch needs the full sequence: with only the answer
/// span supervised, a desk-scale model never forms the in-context
/// retrieval circuits the rest of the pipeline studies. Answer-only is the
/// fine-tuning convention and stays available.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClmSpan {
    Full,
    AnswerOnly,
}

impl Default for ClmSpan {
    fn default() -> Self {
        ClmSpan::Full
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Contrastive weight; 0 disables the contrastive branch entirely
    /// (the Vanilla-SFT objective).
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau_con: f64,
    pub target_heads: Vec<HeadId>,
    pub similarity_mode: SimilarityMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    pub schedule: LrSchedule,
    /// Re-shuffle passage order freshly each step (the Vanilla-SFT input
    /// convention).
    pub shuffle_passages: bool,
    /// CLM supervision span; full-sequence by default for from-scratch
    /// training.
    #[serde(default)]
    pub clm_span: ClmSpan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            tau_con: 0.05,
            target_heads: Vec::new(),
            similarity_mode: SimilarityMode::Concatenated,
            lr: 3e-4,
            beta1: PAPER_BETA1,
            beta2: PAPER_BETA2,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            steps: 200,
            batch_size: 4,
            master_seed: 0,
            schedule: LrSchedule::Cosine { warmup_steps: 20 },
            shuffle_passages: false,
            clm_span: ClmSpan::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(LabError::Config("lambda must be nonnegative".into()));
        }
        if self.tau_con <= 0.0 {
            return Err(LabError::Config("tau_con must be positive".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(LabError::Config("steps and batch_size must be positive".into()));
        }
        if self.lr < 0.0 {
            return Err(LabError::Config("learning rate must be nonnegative".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &h in &self.target_heads {
            if !seen.insert(h) {
                return Err(LabError::Config(format!("duplicate target head {h}")));
            }
        }
        Ok(())
    }

    /// Whether the contrastive branch runs at all.
    pub fn contrastive_active(&self) -> bool {
        self.lambda > 0.0 && !self.target_heads.is_empty()
    }
}

/// CLM, contrastive, and weighted total loss of one step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clm: f64,
    pub con: f64,
    pub total: f64,
    pub step: u64,
}

/// `total = clm + lambda * con`, computed exactly as written.
pub fn total_loss(clm: f64, con: f64, lambda: f64, step: u64) -> LossBreakdown {
    LossBreakdown { clm, con, total: clm + lambda * con, step }
}

/// Mean of each passage's post-rotation key projections: the passage's
/// pooled key representation. Value-level form over an extracted trace.
pub fn pooled_passage_keys(
    trace: &AttentionTrace,
    layout: &PromptLayout,
) -> Result<Vec<Tensor>> {
    let (rows, d) = trace.k_projs.dim2()?;
    let mut out = Vec::with_capacity(layout.passage_spans.len());
    for &(start, end) in &layout.passage_spans {
        if start >= end {
            return Err(LabError::Usage(format!("empty passage span {start}..{end}")));
        }
        if end > rows {
            return Err(LabError::Usage(format!(
                "passage span {start}..{end} outside trace key range 0..{rows}"
            )));
        }
        let mut mean = vec![0.0; d];
        for r in start..end {
            for (m, &v) in mean.iter_mut().zip(trace.k_projs.row(r)?.iter()) {
                *m += v;
            }
        }
        let inv = 1.0 / (end - start) as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        out.push(Tensor::new(vec![d], mean)?);
    }
    Ok(out)
}

/// Tape-level pooled keys: one differentiable mean per passage span.
pub fn pooled_passage_keys_vars(
    tape: &mut Tape,
    k_rows: Var,
    layout: &PromptLayout,
) -> Result<Vec<Var>> {
    layout
        .passage_spans
        .iter()
        .map(|&(start, end)| {
            if start >= end {
                return Err(LabError::Usage(format!("empty passage span {start}..{end}")));
            }
            tape.mean_rows_range(k_rows, start, end)
        })
        .collect()
}

/// One selected head's contrastive features: the question query projection
/// and pooled keys per passage.
pub struct HeadFeatures {
    pub head: HeadId,
    pub q: Var,
    pub passage_keys: Vec<Var>,
}

/// Joins per-head features across the selected heads: one query feature of
/// length `|heads| * d_head` (in target-head list order) and one key
/// feature per passage, joined the same way.
pub fn concat_head_features(tape: &mut Tape, feats: &[HeadFeatures]) -> Result<(Var, Vec<Var>)> {
    if feats.is_empty() {
        return Err(LabError::Usage("concat_head_features needs at least one head".into()));
    }
    let n_passages = feats[0].passage_keys.len();
    if feats.iter().any(|f| f.passage_keys.len() != n_passages) {
        return Err(LabError::Usage("heads disagree on passage count".into()));
    }
    let q_parts: Vec<Var> = feats.iter().map(|f| f.q).collect();
    let q = tape.concat1d(&q_parts)?;
    let mut keys = Vec::with_capacity(n_passages);
    for k in 0..n_passages {
        let parts: Vec<Var> = feats.iter().map(|f| f.passage_keys[k]).collect();
        keys.push(tape.concat1d(&parts)?);
    }
    Ok((q, keys))
}

/// InfoNCE over precomputed similarities: `-log softmax(sims / tau)[golden]`.
pub fn contrastive_loss_from_sims(
    tape: &mut Tape,
    sims: &[Var],
    golden: usize,
    tau: f64,
) -> Result<Var> {
    if sims.len() < 2 {
        return Err(LabError::Usage("contrastive loss needs at least two passages".into()));
    }
    if golden >= sims.len() {
        return Err(LabError::Usage(format!(
            "golden index {golden} out of range for {} passages",
            sims.len()
        )));
    }
    if tau <= 0.0 {
        return Err(LabError::Config("contrastive temperature must be positive".into()));
    }
    let stacked = tape.concat1d(sims)?;
    let scaled = tape.scale(stacked, 1.0 / tau)?;
    tape.neg_log_softmax_pick(scaled, golden)
}

/// Head-level contrastive loss from per-head features. Concatenated mode
/// computes one loss over joined features; per-head mode sums one loss per
/// head.
pub fn contrastive_loss(
    tape: &mut Tape,
    feats: &[HeadFeatures],
    golden: usize,
    tau: f64,
    mode: SimilarityMode,
) -> Result<Var> {
    if feats.is_empty() {
        return Err(LabError::Usage("contrastive loss needs at least one head".into()));
    }
    match mode {
        SimilarityMode::Concatenated => {
            let (q, keys) = concat_head_features(tape, feats)?;
            let sims: Vec<Var> = keys
                .iter()
                .map(|&k| tape.cosine_similarity(q, k))
                .collect::<Result<_>>()?;
            contrastive_loss_from_sims(tape, &sims, golden, tau)
        }
        SimilarityMode::PerHead => {
            let mut total: Option<Var> = None;
            for f in feats {
                let sims: Vec<Var> = f
                    .passage_keys
                    .iter()
                    .map(|&k| tape.cosine_similarity(f.q, k))
                    .collect::<Result<_>>()?;
                let term = contrastive_loss_from_sims(tape, &sims, golden, tau)?;
                total = Some(match total {
                    None => term,
                    Some(acc) => tape.add(acc, term)?,
                });
            }
            Ok(total.expect("feats nonempty"))
        }
    }
}
