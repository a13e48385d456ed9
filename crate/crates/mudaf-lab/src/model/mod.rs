//! Small decoder-only transformer: pre-norm RMS blocks, rotary positions,
//! optional grouped-query attention, SiLU-gated MLPs, untied output head.
//!
//! Two capabilities distinguish it from a plain language model: every
//! forward pass can extract per-head [`AttentionTrace`]s (the attention row
//! of a chosen query token plus the post-rotation query/key projections
//! behind it), and any set of heads can be masked by zeroing their per-head
//! context vectors before the output projection.

pub mod checkpoint;
pub mod config;

pub use checkpoint::Checkpoint;
pub use config::{kv_group_of, HeadId, ModelConfig};

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};
use crate::tensor::tape::RotaryTable;
use crate::tensor::{Tape, Tensor, Var};

/// Weight init: scaled normal with residual projections damped by depth.
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub attn_norm: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub mlp_norm: Tensor,
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

/// The model: configuration plus named weight tensors.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub tok_emb: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Tensor,
    pub lm_head: Tensor,
    rope: Arc<RotaryTable>,
}

/// Tape handles for one model registration.
pub struct LayerVars {
    pub attn_norm: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub mlp_norm: Var,
    pub w_gate: Var,
    pub w_up: Var,
    pub w_down: Var,
}

pub struct ModelVars {
    pub tok_emb: Var,
    pub layers: Vec<LayerVars>,
    pub final_norm: Var,
    pub lm_head: Var,
}

impl ModelVars {
    /// Handles in the same order as [`Model::named_tensors`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.tok_emb];
        for l in &self.layers {
            out.extend([
                l.attn_norm, l.wq, l.wk, l.wv, l.wo, l.mlp_norm, l.w_gate, l.w_up, l.w_down,
            ]);
        }
        out.push(self.final_norm);
        out.push(self.lm_head);
        out
    }

    /// Inverse of [`ModelVars::flat`]: rebuilds the structure from handles
    /// in [`Model::named_tensors`] order.
    pub fn from_flat(config: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let expected = 3 + config.n_layers * 9;
        if vars.len() != expected {
            return Err(LabError::Usage(format!(
                "expected {expected} weight handles, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let tok_emb = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerVars {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                mlp_norm: next(),
                w_gate: next(),
                w_up: next(),
                w_down: next(),
            })
            .collect();
        let final_norm = next();
        let lm_head = next();
        Ok(ModelVars { tok_emb, layers, final_norm, lm_head })
    }
}

/// Request to trace one head's attention at one query position.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TraceRequest {
    pub head: HeadId,
    pub query_index: usize,
}

/// Per-head forward options.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub traces: Vec<TraceRequest>,
    pub masked_heads: BTreeSet<HeadId>,
    /// Skips every attention sublayer; the oracle for all-heads masking.
    pub ablate_attention: bool,
}

/// Tape-level trace: differentiable handles into the forward graph.
pub struct TraceHandles {
    pub head: HeadId,
    pub query_index: usize,
    /// Full-length attention row of the query token (zeros beyond it).
    pub attn_row: Var,
    /// Post-rotation query projection of the query token.
    pub q_proj: Var,
    /// Post-rotation key projections of the head's KV group, all positions.
    pub k_rows: Var,
}

/// Value-level trace of one head at one query position.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub head: HeadId,
    pub query_token_index: usize,
    /// Attention over all positions; entries past the query index are 0.
    pub attn_row: Vec<f64>,
    /// Post-rotation query projection, length `d_head`.
    pub q_proj: Vec<f64>,
    /// Post-rotation key projections for positions `0..=query_token_index`,
    /// shape `(query_token_index + 1) x d_head`.
    pub k_projs: Tensor,
}

impl Model {
    /// Fresh model with scaled-normal weights (std 0.02; residual output
    /// projections divided by sqrt(2 * n_layers)); norm gains start at one.
    pub fn new_random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let residual_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let d = config.d_model;
        let kv = config.kv_dim();
        let hidden = config.mlp_dim();

        let mut normal = |shape: Vec<usize>, std: f64| -> Tensor {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|_| standard_normal(&mut rng) * std).collect();
            Tensor::new(shape, data).expect("shape/data constructed together")
        };

        let tok_emb = normal(vec![config.vocab_size, d], INIT_STD);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                attn_norm: ones(d),
                wq: normal(vec![d, d], INIT_STD),
                wk: normal(vec![d, kv], INIT_STD),
                wv: normal(vec![d, kv], INIT_STD),
                wo: normal(vec![d, d], INIT_STD * residual_scale),
                mlp_norm: ones(d),
                w_gate: normal(vec![d, hidden], INIT_STD),
                w_up: normal(vec![d, hidden], INIT_STD),
                w_down: normal(vec![hidden, d], INIT_STD * residual_scale),
            });
        }
        let final_norm = ones(d);
        let lm_head = normal(vec![d, config.vocab_size], INIT_STD);
        let rope = Arc::new(RotaryTable::new(config.d_head, config.max_seq_len)?);
        Ok(Model { config, tok_emb, layers, final_norm, lm_head, rope })
    }

    /// Rebuilds derived state (rotary tables) for deserialized weights.
    pub fn from_parts(
        config: ModelConfig,
        tok_emb: Tensor,
        layers: Vec<LayerWeights>,
        final_norm: Tensor,
        lm_head: Tensor,
    ) -> Result<Self> {
        config.validate()?;
        let rope = Arc::new(RotaryTable::new(config.d_head, config.max_seq_len)?);
        let model = Model { config, tok_emb, layers, final_norm, lm_head, rope };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_shapes(&self) -> Result<()> {
        for (name, t) in self.named_tensors() {
            let expected = self.expected_shape(&name);
            if t.shape() != expected.as_slice() {
                return Err(LabError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config implies {expected:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn expected_shape(&self, name: &str) -> Vec<usize> {
        let c = &self.config;
        let (d, kv, hidden) = (c.d_model, c.kv_dim(), c.mlp_dim());
        match name {
            "tok_emb" => vec![c.vocab_size, d],
            "final_norm" => vec![d],
            "lm_head" => vec![d, c.vocab_size],
            _ => {
                let field = name.rsplit('.').next().unwrap_or(name);
                match field {
                    "attn_norm" | "mlp_norm" => vec![d],
                    "wq" | "wo" => vec![d, d],
                    "wk" | "wv" => vec![d, kv],
                    "w_gate" | "w_up" => vec![d, hidden],
                    "w_down" => vec![hidden, d],
                    _ => vec![],
                }
            }
        }
    }

    /// Weight tensors in a fixed order (checkpoints, optimizer state).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("tok_emb".into(), &self.tok_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            out.push((format!("layers.{i}.wq"), &l.wq));
            out.push((format!("layers.{i}.wk"), &l.wk));
            out.push((format!("layers.{i}.wv"), &l.wv));
            out.push((format!("layers.{i}.wo"), &l.wo));
            out.push((format!("layers.{i}.mlp_norm"), &l.mlp_norm));
            out.push((format!("layers.{i}.w_gate"), &l.w_gate));
            out.push((format!("layers.{i}.w_up"), &l.w_up));
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("lm_head".into(), &self.lm_head));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![("tok_emb".into(), &mut self.tok_emb)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &mut l.attn_norm));
            out.push((format!("layers.{i}.wq"), &mut l.wq));
            out.push((format!("layers.{i}.wk"), &mut l.wk));
            out.push((format!("layers.{i}.wv"), &mut l.wv));
            out.push((format!("layers.{i}.wo"), &mut l.wo));
            out.push((format!("layers.{i}.mlp_norm"), &mut l.mlp_norm));
            out.push((format!("layers.{i}.w_gate"), &mut l.w_gate));
            out.push((format!("layers.{i}.w_up"), &mut l.w_up));
            out.push((format!("layers.{i}.w_down"), &mut l.w_down));
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        out.push(("lm_head".into(), &mut self.lm_head));
        out
    }

    /// Registers every weight on the tape; `trainable` controls whether
    /// gradients flow into them.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let mut reg = |t: &Tensor| tape.leaf(t.clone().with_requires_grad(trainable));
        let tok_emb = reg(&self.tok_emb);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                attn_norm: reg(&l.attn_norm),
                wq: reg(&l.wq),
                wk: reg(&l.wk),
                wv: reg(&l.wv),
                wo: reg(&l.wo),
                mlp_norm: reg(&l.mlp_norm),
                w_gate: reg(&l.w_gate),
                w_up: reg(&l.w_up),
                w_down: reg(&l.w_down),
            })
            .collect();
        let final_norm = reg(&self.final_norm);
        let lm_head = reg(&self.lm_head);
        ModelVars { tok_emb, layers, final_norm, lm_head }
    }

    /// Builds the causal forward pass on `tape`, returning the T×V logits
    /// and one differentiable trace per request.
    pub fn build_forward(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        tokens: &[u32],
        opts: &ForwardOptions,
    ) -> Result<(Var, Vec<TraceHandles>)> {
        let c = &self.config;
        let t_len = tokens.len();
        if t_len == 0 {
            return Err(LabError::Input("forward needs at least one token".into()));
        }
        if t_len > c.max_seq_len {
            return Err(LabError::Length(format!(
                "sequence length {t_len} exceeds max_seq_len {}",
                c.max_seq_len
            )));
        }
        for req in &opts.traces {
            if !c.head_in_range(req.head) {
                return Err(LabError::Usage(format!(
                    "trace request for out-of-range head {}",
                    req.head
                )));
            }
            if req.query_index >= t_len {
                return Err(LabError::Usage(format!(
                    "trace query index {} out of range for length {t_len}",
                    req.query_index
                )));
            }
        }
        for &m in &opts.masked_heads {
            if !c.head_in_range(m) {
                return Err(LabError::Usage(format!("masked head {m} out of range")));
            }
        }

        let dh = c.d_head;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut handles = Vec::new();
        let mut x = tape.embed(vars.tok_emb, tokens)?;

        for (li, lv) in vars.layers.iter().enumerate() {
            if !opts.ablate_attention {
                let xn = tape.rms_norm(x, lv.attn_norm)?;
                let q = tape.matmul(xn, lv.wq)?;
                let k = tape.matmul(xn, lv.wk)?;
                let v = tape.matmul(xn, lv.wv)?;

                let mut k_rot = Vec::with_capacity(c.n_kv_heads);
                let mut v_grp = Vec::with_capacity(c.n_kv_heads);
                for g in 0..c.n_kv_heads {
                    let ks = tape.slice_cols(k, g * dh, dh)?;
                    k_rot.push(tape.rope(ks, &self.rope)?);
                    v_grp.push(tape.slice_cols(v, g * dh, dh)?);
                }

                let mut ctx_parts = Vec::with_capacity(c.n_heads);
                for h in 0..c.n_heads {
                    let head = HeadId { layer: li, head: h };
                    let g = kv_group_of(head, c);
                    let qs = tape.slice_cols(q, h * dh, dh)?;
                    let q_rot = tape.rope(qs, &self.rope)?;
                    let scores = tape.matmul_nt(q_rot, k_rot[g])?;
                    let scaled = tape.scale(scores, scale)?;
                    let attn = tape.causal_softmax(scaled)?;

                    for req in opts.traces.iter().filter(|r| r.head == head) {
                        handles.push(TraceHandles {
                            head,
                            query_index: req.query_index,
                            attn_row: tape.row(attn, req.query_index)?,
                            q_proj: tape.row(q_rot, req.query_index)?,
                            k_rows: k_rot[g],
                        });
                    }

                    if opts.masked_heads.contains(&head) {
                        ctx_parts.push(tape.constant(Tensor::zeros(vec![t_len, dh])));
                    } else {
                        ctx_parts.push(tape.matmul(attn, v_grp[g])?);
                    }
                }
                let ctx = tape.concat_cols(&ctx_parts)?;
                let proj = tape.matmul(ctx, lv.wo)?;
                x = tape.add(x, proj)?;
            }

            let xn2 = tape.rms_norm(x, lv.mlp_norm)?;
            let gate = tape.matmul(xn2, lv.w_gate)?;
            let act = tape.silu(gate)?;
            let up = tape.matmul(xn2, lv.w_up)?;
            let gated = tape.mul(act, up)?;
            let down = tape.matmul(gated, lv.w_down)?;
            x = tape.add(x, down)?;
        }

        let xf = tape.rms_norm(x, vars.final_norm)?;
        let logits = tape.matmul(xf, vars.lm_head)?;
        Ok((logits, handles))
    }

    /// Non-trainable forward pass returning logits and value-level traces.
    pub fn forward(
        &self,
        tokens: &[u32],
        opts: &ForwardOptions,
    ) -> Result<(Tensor, Vec<AttentionTrace>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let (logits, handles) = self.build_forward(&mut tape, &vars, tokens, opts)?;
        let traces = handles.iter().map(|h| extract_trace(&tape, h)).collect::<Result<_>>()?;
        Ok((tape.value(logits).clone(), traces))
    }

    /// Greedy decode: appends argmax tokens (ties to the lowest id) until
    /// `eos` or `max_new` tokens; the generated suffix excludes `eos`.
    pub fn greedy_decode(
        &self,
        prompt: &[u32],
        max_new: usize,
        eos: u32,
        masked_heads: &BTreeSet<HeadId>,
    ) -> Result<Vec<u32>> {
        let mut tokens = prompt.to_vec();
        let mut generated = Vec::new();
        let opts = ForwardOptions { masked_heads: masked_heads.clone(), ..Default::default() };
        for _ in 0..max_new {
            let (logits, _) = self.forward(&tokens, &opts)?;
            let (t, _) = logits.dim2()?;
            let last = logits.row(t - 1)?;
            let mut best = 0usize;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            let next = best as u32;
            if next == eos {
                break;
            }
            generated.push(next);
            tokens.push(next);
        }
        Ok(generated)
    }
}

/// Materializes a value-level [`AttentionTrace`] from tape handles.
pub fn extract_trace(tape: &Tape, h: &TraceHandles) -> Result<AttentionTrace> {
    let attn_row = tape.value(h.attn_row).data().to_vec();
    let q_proj = tape.value(h.q_proj).data().to_vec();
    let k_all = tape.value(h.k_rows);
    let (_, dh) = k_all.dim2()?;
    let rows = h.query_index + 1;
    let k_projs = Tensor::new(vec![rows, dh], k_all.data()[..rows * dh].to_vec())?;
    Ok(AttentionTrace {
        head: h.head,
        query_token_index: h.query_index,
        attn_row,
        q_proj,
        k_projs,
    })
}

/// Scaled-dot-product attention of one query against keys/values at
/// positions `0..keys.rows()`, with positions beyond `query_pos` masked
/// out before the softmax. Returns the context vector and attention row.
pub fn attention_head(
    query: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    query_pos: usize,
) -> Result<(Tensor, Tensor)> {
    let (n, d) = keys.dim2()?;
    if query.shape() != [d] {
        return Err(LabError::Dimension(format!(
            "query shape {:?} does not match key width {d}",
            query.shape()
        )));
    }
    if values.dim2()? != (n, values.cols()?) {
        return Err(LabError::Dimension("keys and values must have equal rows".into()));
    }
    if values.rows()? != n {
        return Err(LabError::Dimension("keys and values must have equal rows".into()));
    }
    if query_pos >= n {
        return Err(LabError::Usage(format!("query_pos {query_pos} out of range for {n} keys")));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let visible = query_pos + 1;
    let mut row = vec![0.0; n];
    for j in 0..visible {
        row[j] = crate::tensor::kernels::dot(query.data(), keys.row(j)?) * scale;
    }
    crate::tensor::kernels::softmax_lane(&mut row[..visible]);
    let dv = values.cols()?;
    let mut ctx = vec![0.0; dv];
    for j in 0..visible {
        for (c, &v) in ctx.iter_mut().zip(values.row(j)?.iter()) {
            *c += row[j] * v;
        }
    }
    Ok((Tensor::new(vec![dv], ctx)?, Tensor::new(vec![n], row)?))
}

fn ones(n: usize) -> Tensor {
    Tensor::new(vec![n], vec![1.0; n]).expect("static shape")
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero so ln() stays finite.
    loop {
        let u1: f64 = rng.gen();
        if u1 > 1e-300 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> Model {
        let mut cfg = ModelConfig::micro(20);
        cfg.n_kv_heads = 2;
        Model::new_random(cfg, 7).unwrap()
    }

    fn mha_model() -> Model {
        let mut cfg = ModelConfig::micro(20);
        cfg.n_kv_heads = cfg.n_heads;
        Model::new_random(cfg, 7).unwrap()
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let m = tiny_model();
        let tokens = [1u32, 4, 9, 2, 2, 7];
        let (a, _) = m.forward(&tokens, &ForwardOptions::default()).unwrap();
        let (b, _) = m.forward(&tokens, &ForwardOptions::default()).unwrap();
        assert_eq!(a.shape(), &[6, 20]);
        assert_eq!(a.data(), b.data(), "logits must be bit-identical");
    }

    #[test]
    fn tracing_does_not_change_logits() {
        let m = tiny_model();
        let tokens = [3u32, 1, 5, 8];
        let (plain, _) = m.forward(&tokens, &ForwardOptions::default()).unwrap();
        let opts = ForwardOptions {
            traces: m
                .config()
                .all_heads()
                .into_iter()
                .map(|head| TraceRequest { head, query_index: 3 })
                .collect(),
            ..Default::default()
        };
        let (traced, traces) = m.forward(&tokens, &opts).unwrap();
        assert_eq!(plain.data(), traced.data());
        assert_eq!(traces.len(), m.config().total_heads());
    }

    #[test]
    fn trace_rows_are_causal_and_normalized() {
        let m = tiny_model();
        let tokens = [3u32, 1, 5, 8, 2, 2, 0];
        let qi = 4usize;
        let opts = ForwardOptions {
            traces: vec![TraceRequest { head: HeadId { layer: 1, head: 2 }, query_index: qi }],
            ..Default::default()
        };
        let (_, traces) = m.forward(&tokens, &opts).unwrap();
        let tr = &traces[0];
        assert_eq!(tr.attn_row.len(), tokens.len());
        for &v in &tr.attn_row[qi + 1..] {
            assert_eq!(v, 0.0, "future positions must be exactly zero");
        }
        let sum: f64 = tr.attn_row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert_eq!(tr.k_projs.rows().unwrap(), qi + 1);
    }

    #[test]
    fn trace_row_rederives_from_projections() {
        let m = tiny_model();
        let tokens = [3u32, 1, 5, 8, 2];
        let qi = 4usize;
        let opts = ForwardOptions {
            traces: vec![TraceRequest { head: HeadId { layer: 0, head: 3 }, query_index: qi }],
            ..Default::default()
        };
        let (_, traces) = m.forward(&tokens, &opts).unwrap();
        let tr = &traces[0];
        let d = tr.q_proj.len() as f64;
        let mut scores: Vec<f64> = (0..=qi)
            .map(|j| {
                crate::tensor::kernels::dot(&tr.q_proj, tr.k_projs.row(j).unwrap()) / d.sqrt()
            })
            .collect();
        crate::tensor::kernels::softmax_lane(&mut scores);
        for (j, &s) in scores.iter().enumerate() {
            assert!((s - tr.attn_row[j]).abs() < 1e-6, "position {j}");
        }
    }

    #[test]
    fn shared_kv_group_heads_see_identical_keys() {
        let m = tiny_model(); // n_heads 4, n_kv_heads 2 -> groups {0,1}, {2,3}
        let tokens = [1u32, 2, 3, 4];
        let reqs: Vec<TraceRequest> = (0..4)
            .map(|h| TraceRequest { head: HeadId { layer: 0, head: h }, query_index: 3 })
            .collect();
        let opts = ForwardOptions { traces: reqs, ..Default::default() };
        let (_, traces) = m.forward(&tokens, &opts).unwrap();
        assert_eq!(traces[0].k_projs, traces[1].k_projs);
        assert_eq!(traces[2].k_projs, traces[3].k_projs);
        assert_ne!(traces[0].k_projs, traces[2].k_projs);
    }

    #[test]
    fn empty_mask_set_leaves_logits_bit_identical() {
        let m = tiny_model();
        let tokens = [5u32, 6, 7];
        let (plain, _) = m.forward(&tokens, &ForwardOptions::default()).unwrap();
        let opts = ForwardOptions { masked_heads: BTreeSet::new(), ..Default::default() };
        let (masked, _) = m.forward(&tokens, &opts).unwrap();
        assert_eq!(plain.data(), masked.data());
    }

    #[test]
    fn masking_zero_value_head_changes_nothing() {
        // MHA so the head owns its value block; zero it out.
        let mut m = mha_model();
        let dh = m.config().d_head;
        let head = 1usize;
        {
            let kv = m.config().kv_dim();
            let w = m.layers[0].wv.data_mut();
            let rows = w.len() / kv;
            for r in 0..rows {
                for c in head * dh..(head + 1) * dh {
                    w[r * kv + c] = 0.0;
                }
            }
        }
        let tokens = [2u32, 9, 4, 4];
        let (plain, _) = m.forward(&tokens, &ForwardOptions::default()).unwrap();
        let opts = ForwardOptions {
            masked_heads: [HeadId { layer: 0, head }].into_iter().collect(),
            ..Default::default()
        };
        let (masked, _) = m.forward(&tokens, &opts).unwrap();
        assert_eq!(plain.data(), masked.data());
    }

    #[test]
    fn masking_every_head_equals_attention_free_model() {
        let m = tiny_model();
        let tokens = [1u32, 2, 3, 4, 5];
        let opts = ForwardOptions {
            masked_heads: m.config().all_heads().into_iter().collect(),
            ..Default::default()
        };
        let (masked, _) = m.forward(&tokens, &opts).unwrap();
        let ablated_opts = ForwardOptions { ablate_attention: true, ..Default::default() };
        let (ablated, _) = m.forward(&tokens, &ablated_opts).unwrap();
        for (a, b) in masked.data().iter().zip(ablated.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        let m = tiny_model();
        assert_eq!(
            m.forward(&[99u32], &ForwardOptions::default()).unwrap_err().class(),
            "input"
        );
        let opts = ForwardOptions {
            traces: vec![TraceRequest {
                head: HeadId { layer: 9, head: 0 },
                query_index: 0,
            }],
            ..Default::default()
        };
        assert_eq!(m.forward(&[1u32], &opts).unwrap_err().class(), "usage");
    }

    #[test]
    fn attention_head_single_token_row_is_one() {
        let q = Tensor::new(vec![2], vec![0.3, -0.1]).unwrap();
        let k = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![5.0, 6.0]).unwrap();
        let (ctx, row) = attention_head(&q, &k, &v, 0).unwrap();
        assert_eq!(row.data(), &[1.0]);
        assert_eq!(ctx.data(), &[5.0, 6.0]);
    }

    #[test]
    fn attention_head_identical_keys_is_uniform() {
        let q = Tensor::new(vec![2], vec![0.7, 0.7]).unwrap();
        let k = Tensor::new(vec![3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let v = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let (_, row) = attention_head(&q, &k, &v, 2).unwrap();
        for &w in row.data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        // Future masking: with query_pos = 1 the third key is invisible.
        let (_, row) = attention_head(&q, &k, &v, 1).unwrap();
        assert_eq!(row.data()[2], 0.0);
        assert!((row.data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn attention_head_three_token_hand_case() {
        let q = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let k = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0]).unwrap();
        let v = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (ctx, row) = attention_head(&q, &k, &v, 2).unwrap();
        // Scalar recomputation: scores = [1, 0, 2] / sqrt(2).
        let s = 2f64.sqrt().recip();
        let e = [s.exp(), 1.0, (2.0 * s).exp()];
        let z = e[0] + e[1] + e[2];
        let w = [e[0] / z, e[1] / z, e[2] / z];
        for j in 0..3 {
            assert!((row.data()[j] - w[j]).abs() < 1e-12);
        }
        let expect = [
            w[0] * 1.0 + w[1] * 3.0 + w[2] * 5.0,
            w[0] * 2.0 + w[1] * 4.0 + w[2] * 6.0,
        ];
        for j in 0..2 {
            assert!((ctx.data()[j] - expect[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let m = tiny_model();
        let a = m.greedy_decode(&[1, 2, 3], 4, 0, &BTreeSet::new()).unwrap();
        let b = m.greedy_decode(&[1, 2, 3], 4, 0, &BTreeSet::new()).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 4);
    }
}
