//! The training loop: per step, forward with traces on the target heads,
//! answer-masked CLM loss, contrastive loss from the question-final query
//! token, combined backward, and a decoupled-weight-decay adaptive-moment
//! update. Deterministic for a fixed master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use super::{contrastive_loss, pooled_passage_keys_vars, HeadFeatures, TrainConfig};
use crate::corpus::{Corpus, MdqaSample};
use crate::derive_seed;
use crate::error::{LabError, Result};
use crate::model::{Checkpoint, ForwardOptions, TraceRequest};
use crate::tensor::Tape;

/// One metrics record per optimizer step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub clm: f64,
    pub con: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
}

// Stream tags for per-step seed derivation.
const STREAM_BATCH: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;

fn step_seed(master: u64, step: usize, stream: u64, lane: u64) -> u64 {
    derive_seed(master, ((step as u64) << 16) | (stream << 8) | lane)
}

/// Runs `config.steps` optimizer steps from `start`, returning the final
/// checkpoint and the per-step metrics stream.
pub fn train_run(
    start: &Checkpoint,
    config: &TrainConfig,
    dataset: &[MdqaSample],
    corpus: &Corpus,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LabError::Usage("training dataset is empty".into()));
    }
    let mut model = start.model.clone();
    for &h in &config.target_heads {
        if !model.config().head_in_range(h) {
            return Err(LabError::Config(format!("target head {h} out of range")));
        }
    }
    let contrastive = config.contrastive_active();
    let sizes: Vec<usize> = model.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut opt = AdamW::new(
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
        &sizes,
    );
    let inv_batch = 1.0 / config.batch_size as f64;
    let mut metrics = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let lr = config.schedule.lr_at(config.lr, step, config.steps);
        let mut batch_rng =
            ChaCha8Rng::seed_from_u64(step_seed(config.master_seed, step, STREAM_BATCH, 0));
        let batch: Vec<usize> =
            (0..config.batch_size).map(|_| batch_rng.gen_range(0..dataset.len())).collect();

        let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let mut clm_sum = 0.0;
        let mut con_sum = 0.0;

        for (lane, &idx) in batch.iter().enumerate() {
            let shuffled;
            let sample = if config.shuffle_passages {
                shuffled = corpus.shuffle_passages(
                    &dataset[idx],
                    step_seed(config.master_seed, step, STREAM_SHUFFLE, lane as u64),
                )?;
                &shuffled
            } else {
                &dataset[idx]
            };
            let (clm, con) = match train_sample(&model, config, contrastive, sample, inv_batch, &mut grads) {
                Ok(v) => v,
                Err(LabError::Numeric(detail)) => {
                    return Err(LabError::NonFiniteLoss {
                        step: start.step + step as u64,
                        detail: format!("sample {idx} of batch {batch:?}: {detail}"),
                    });
                }
                Err(e) => return Err(e),
            };
            clm_sum += clm;
            con_sum += con;
        }

        let clm_mean = clm_sum * inv_batch;
        let con_mean = con_sum * inv_batch;
        let total = clm_mean + config.lambda * con_mean;
        if !total.is_finite() {
            return Err(LabError::NonFiniteLoss {
                step: start.step + step as u64,
                detail: format!("batch {batch:?}: clm {clm_mean}, con {con_mean}"),
            });
        }

        let mut named = model.named_tensors_mut();
        let mut params: Vec<&mut crate::tensor::Tensor> =
            named.iter_mut().map(|(_, t)| &mut **t).collect();
        opt.step(&mut params, &grads, lr);

        metrics.push(StepMetrics {
            step: start.step + step as u64,
            clm: clm_mean,
            con: con_mean,
            total,
            lr,
        });
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, start.step + config.steps as u64, config.master_seed),
        metrics,
    })
}

/// Forward/backward for one sample; accumulates `1/B`-scaled gradients and
/// returns the unscaled (clm, con) values.
fn train_sample(
    model: &crate::model::Model,
    config: &TrainConfig,
    contrastive: bool,
    sample: &MdqaSample,
    inv_batch: f64,
    grads: &mut [Vec<f64>],
) -> Result<(f64, f64)> {
    let layout = &sample.layout;
    let tokens = &layout.tokens;
    let t_len = tokens.len();

    let mut tape = Tape::new();
    let vars = model.register(&mut tape, true);
    let opts = ForwardOptions {
        traces: if contrastive {
            config
                .target_heads
                .iter()
                .map(|&head| TraceRequest {
                    head,
                    query_index: layout.question_last_token_index,
                })
                .collect()
        } else {
            Vec::new()
        },
        ..Default::default()
    };
    let (logits, handles) = model.build_forward(&mut tape, &vars, tokens, &opts)?;

    // Position t predicts token t+1. Answer-only mode supervises the answer
    // span plus the closing <eos>; full mode supervises every position.
    let (ans_start, ans_end) = layout.answer_span;
    let mut targets = vec![0u32; t_len];
    let mut mask = vec![false; t_len];
    for t in 0..t_len - 1 {
        targets[t] = tokens[t + 1];
        mask[t] = match config.clm_span {
            super::ClmSpan::Full => true,
            super::ClmSpan::AnswerOnly => (t + 1) >= ans_start && (t + 1) <= ans_end,
        };
    }
    let clm = tape.cross_entropy_masked(logits, &targets, &mask)?;
    let clm_value = tape.value(clm).item()?;

    let (loss, con_value) = if contrastive {
        if sample.golden_indices.len() != 1 {
            return Err(LabError::Usage(format!(
                "contrastive training needs exactly one golden passage, got {}",
                sample.golden_indices.len()
            )));
        }
        let golden = *sample.golden_indices.iter().next().expect("nonempty");
        let mut feats = Vec::with_capacity(config.target_heads.len());
        for &head in &config.target_heads {
            let handle = handles
                .iter()
                .find(|h| h.head == head)
                .ok_or_else(|| LabError::Usage(format!("missing trace for head {head}")))?;
            let passage_keys = pooled_passage_keys_vars(&mut tape, handle.k_rows, layout)?;
            feats.push(HeadFeatures { head, q: handle.q_proj, passage_keys });
        }
        let con = contrastive_loss(
            &mut tape,
            &feats,
            golden,
            config.tau_con,
            config.similarity_mode,
        )?;
        let con_value = tape.value(con).item()?;
        let weighted = tape.scale(con, config.lambda)?;
        (tape.add(clm, weighted)?, con_value)
    } else {
        (clm, 0.0)
    };

    if !clm_value.is_finite() || !con_value.is_finite() {
        return Err(LabError::Numeric(format!(
            "loss left the finite range (clm {clm_value}, con {con_value})"
        )));
    }

    let scaled = tape.scale(loss, inv_batch)?;
    tape.backward(scaled)?;
    for (g, var) in grads.iter_mut().zip(vars.flat()) {
        if let Some(delta) = tape.grad(var) {
            for (a, &d) in g.iter_mut().zip(delta.iter()) {
                *a += d;
            }
        }
    }
    Ok((clm_value, con_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusConfig;
    use crate::model::{HeadId, Model, ModelConfig};

    fn micro_setup() -> (Corpus, Vec<MdqaSample>, Checkpoint) {
        let corpus = Corpus::new(CorpusConfig {
            n_passages: 3,
            ..CorpusConfig::default()
        })
        .unwrap();
        let dataset = corpus.generate_many(6, 11).unwrap();
        let model = Model::new_random(ModelConfig::micro(corpus.vocab().size()), 5).unwrap();
        (corpus, dataset, Checkpoint::new(model, 0, 5))
    }

    fn micro_config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            lr: 1e-3,
            schedule: crate::train::LrSchedule::Constant,
            master_seed: 21,
            ..TrainConfig::default()
        }
    }

    fn weights_bits(ckpt: &Checkpoint) -> Vec<u64> {
        ckpt.model
            .named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn lambda_zero_equals_contrastive_code_disabled() {
        let (corpus, dataset, start) = micro_setup();
        let heads = vec![HeadId { layer: 0, head: 1 }, HeadId { layer: 1, head: 2 }];
        let with_heads = TrainConfig {
            lambda: 0.0,
            target_heads: heads,
            ..micro_config(3)
        };
        let without = TrainConfig { lambda: 0.0, ..micro_config(3) };
        let a = train_run(&start, &with_heads, &dataset, &corpus).unwrap();
        let b = train_run(&start, &without, &dataset, &corpus).unwrap();
        assert_eq!(weights_bits(&a.checkpoint), weights_bits(&b.checkpoint));
        for (ma, mb) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(ma.total.to_bits(), mb.total.to_bits());
            assert_eq!(ma.con, 0.0);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (corpus, dataset, start) = micro_setup();
        let cfg = TrainConfig { lr: 0.0, ..micro_config(2) };
        let out = train_run(&start, &cfg, &dataset, &corpus).unwrap();
        assert_eq!(weights_bits(&out.checkpoint), weights_bits(&start));
        assert_eq!(out.checkpoint.step, 2);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (corpus, dataset, start) = micro_setup();
        let cfg = TrainConfig {
            target_heads: vec![HeadId { layer: 0, head: 0 }],
            ..micro_config(3)
        };
        let a = train_run(&start, &cfg, &dataset, &corpus).unwrap();
        let b = train_run(&start, &cfg, &dataset, &corpus).unwrap();
        assert_eq!(weights_bits(&a.checkpoint), weights_bits(&b.checkpoint));
        let other = TrainConfig { master_seed: 22, ..cfg };
        let c = train_run(&start, &other, &dataset, &corpus).unwrap();
        assert_ne!(weights_bits(&a.checkpoint), weights_bits(&c.checkpoint));
    }

    #[test]
    fn metrics_satisfy_the_total_identity() {
        let (corpus, dataset, start) = micro_setup();
        let cfg = TrainConfig {
            lambda: 0.7,
            target_heads: vec![HeadId { layer: 1, head: 3 }],
            ..micro_config(3)
        };
        let out = train_run(&start, &cfg, &dataset, &corpus).unwrap();
        for m in &out.metrics {
            assert!((m.total - (m.clm + 0.7 * m.con)).abs() < 1e-9);
            assert!(m.con > 0.0, "contrastive loss should be live");
        }
    }

    #[test]
    fn gradients_reach_both_lm_and_projection_weights() {
        let (corpus, dataset, start) = micro_setup();
        let cfg = TrainConfig {
            target_heads: vec![HeadId { layer: 0, head: 1 }],
            ..micro_config(1)
        };
        // One training step must move the lm head, the embedding, and the
        // traced layer's q/k projections.
        let out = train_run(&start, &cfg, &dataset, &corpus).unwrap();
        let before = &start.model;
        let after = &out.checkpoint.model;
        let moved = |a: &crate::tensor::Tensor, b: &crate::tensor::Tensor| {
            a.data().iter().zip(b.data().iter()).any(|(x, y)| x != y)
        };
        assert!(moved(&before.lm_head, &after.lm_head));
        assert!(moved(&before.tok_emb, &after.tok_emb));
        assert!(moved(&before.layers[0].wq, &after.layers[0].wq));
        assert!(moved(&before.layers[0].wk, &after.layers[0].wk));
    }

    #[test]
    fn passage_shuffling_changes_the_stream() {
        let (corpus, dataset, start) = micro_setup();
        let plain = micro_config(2);
        let shuffling = TrainConfig { shuffle_passages: true, ..plain.clone() };
        let a = train_run(&start, &plain, &dataset, &corpus).unwrap();
        let b = train_run(&start, &shuffling, &dataset, &corpus).unwrap();
        assert_ne!(weights_bits(&a.checkpoint), weights_bits(&b.checkpoint));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (corpus, _, start) = micro_setup();
        let err = train_run(&start, &micro_config(1), &[], &corpus).unwrap_err();
        assert_eq!(err.class(), "usage");
    }
}
