//! Gradient tape: records primitive applications during the forward pass and
//! replays them in reverse topological order (which is reverse recording
//! order, since every operation creates a fresh node) to accumulate exact
//! reverse-mode gradients.
//!
//! The tape is built per forward pass and dropped afterwards. An operation is
//! recorded only when at least one input requires gradients; pure evaluation
//! leaves no backward work behind. After `backward`, gradients are retained
//! for leaf nodes; intermediate buffers are consumed during the sweep.

use std::sync::Arc;

use super::kernels;
use super::Tensor;
use crate::error::{LabError, Result};

/// Handle to a value stored on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Precomputed rotary cos/sin per (position, pair). `half = d_head / 2`.
#[derive(Debug)]
pub struct RotaryTable {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    pub half: usize,
}

impl RotaryTable {
    /// Standard rotary table with base 10000, covering `max_pos` positions.
    pub fn new(d_head: usize, max_pos: usize) -> Result<Self> {
        if d_head % 2 != 0 {
            return Err(LabError::Config(format!(
                "rotary embedding needs an even head width, got {d_head}"
            )));
        }
        let half = d_head / 2;
        let mut cos = Vec::with_capacity(max_pos * half);
        let mut sin = Vec::with_capacity(max_pos * half);
        for pos in 0..max_pos {
            for pair in 0..half {
                let freq = 1.0 / 10000f64.powf(2.0 * pair as f64 / d_head as f64);
                let angle = pos as f64 * freq;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Ok(RotaryTable { cos, sin, half })
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

enum Record {
    Matmul { a: Var, b: Var, out: Var },
    /// C = A · Bᵀ with A: m×k, B: n×k.
    MatmulNT { a: Var, b: Var, out: Var },
    Add { a: Var, b: Var, out: Var },
    Mul { a: Var, b: Var, out: Var },
    Scale { x: Var, c: f64, out: Var },
    Silu { x: Var, out: Var },
    RmsNorm { x: Var, w: Var, out: Var, rms: Vec<f64> },
    Softmax { x: Var, axis: usize, out: Var },
    CausalSoftmax { out: Var, x: Var },
    Rope { x: Var, out: Var, table: Arc<RotaryTable> },
    Embed { table: Var, ids: Vec<u32>, out: Var },
    SliceCols { x: Var, start: usize, len: usize, out: Var },
    SliceRows { x: Var, start: usize, len: usize, out: Var },
    Row { x: Var, index: usize, out: Var },
    ConcatCols { parts: Vec<Var>, out: Var },
    Concat1d { parts: Vec<Var>, out: Var },
    MeanRowsRange { x: Var, start: usize, end: usize, out: Var },
    SumAll { x: Var, out: Var },
    CrossEntropyMasked { logits: Var, targets: Vec<u32>, mask: Vec<bool>, out: Var },
    CosineSim { u: Var, v: Var, out: Var },
    NegLogSoftmaxPick { x: Var, index: usize, out: Var },
}

/// Records primitive applications with their backward rules.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of values stored on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf value; its `requires_grad` flag decides whether
    /// downstream operations get recorded.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, requires_grad)
    }

    /// Registers a constant leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(false), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a node, if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn out_node(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value.with_requires_grad(requires_grad), requires_grad)
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let grad = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (g, &d) in grad.iter_mut().zip(delta.iter()) {
            *g += d;
        }
    }

    // ── Primitives ───────────────────────────────────────────────────

    /// Standard matrix product; recorded when either input requires grad.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dim2()?;
        let (kb, n) = self.value(b).dim2()?;
        if ka != kb {
            return Err(LabError::Dimension(format!(
                "matmul inner extents disagree: {m}x{ka} vs {kb}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::mm_nn(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let rg = self.requires(a) || self.requires(b);
        let v = self.out_node(Tensor::new(vec![m, n], out)?, rg);
        if rg {
            self.records.push(Record::Matmul { a, b, out: v });
        }
        Ok(v)
    }

    /// A · Bᵀ, with A: m×k and B: n×k.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dim2()?;
        let (n, kb) = self.value(b).dim2()?;
        if ka != kb {
            return Err(LabError::Dimension(format!(
                "matmul_nt inner extents disagree: {m}x{ka} vs ({n}x{kb})ᵀ"
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::mm_nt(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let rg = self.requires(a) || self.requires(b);
        let v = self.out_node(Tensor::new(vec![m, n], out)?, rg);
        if rg {
            self.records.push(Record::MatmulNT { a, b, out: v });
        }
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(LabError::Dimension(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        let v = self.out_node(Tensor::new(shape, data)?, rg);
        if rg {
            self.records.push(Record::Add { a, b, out: v });
        }
        Ok(v)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(LabError::Dimension(format!(
                "mul shapes disagree: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        let v = self.out_node(Tensor::new(shape, data)?, rg);
        if rg {
            self.records.push(Record::Mul { a, b, out: v });
        }
        Ok(v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(shape, data)?, rg);
        if rg {
            self.records.push(Record::Scale { x, c, out: v });
        }
        Ok(v)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| kernels::silu(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(shape, data)?, rg);
        if rg {
            self.records.push(Record::Silu { x, out: v });
        }
        Ok(v)
    }

    /// RMS normalization of each row of `x` (T×d), scaled by weight `w` (d).
    pub fn rms_norm(&mut self, x: Var, w: Var) -> Result<Var> {
        const EPS: f64 = 1e-6;
        let (t, d) = self.value(x).dim2()?;
        if self.value(w).shape() != [d] {
            return Err(LabError::Dimension(format!(
                "rms_norm weight shape {:?} does not match width {d}",
                self.value(w).shape()
            )));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut rms = Vec::with_capacity(t);
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            let row = &xv[r * d..(r + 1) * d];
            let ms: f64 = row.iter().map(|&v| v * v).sum::<f64>() / d as f64;
            let denom = (ms + EPS).sqrt();
            rms.push(denom);
            for (j, &v) in row.iter().enumerate() {
                out[r * d + j] = v / denom * wv[j];
            }
        }
        let rg = self.requires(x) || self.requires(w);
        let v = self.out_node(Tensor::new(vec![t, d], out)?, rg);
        if rg {
            self.records.push(Record::RmsNorm { x, w, out: v, rms });
        }
        Ok(v)
    }

    /// Stabilized softmax along `axis`; every slice sums to 1.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.is_empty() || axis >= shape.len() {
            return Err(LabError::Dimension(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        self.value(x).validate_finite()?;
        let mut data = self.value(x).data().to_vec();
        for_each_lane(&shape, axis, |lane_idx| {
            let mut lane: Vec<f64> = lane_idx.iter().map(|&i| data[i]).collect();
            kernels::softmax_lane(&mut lane);
            for (&i, &v) in lane_idx.iter().zip(lane.iter()) {
                data[i] = v;
            }
        });
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(shape, data)?, rg);
        if rg {
            self.records.push(Record::Softmax { x, axis, out: v });
        }
        Ok(v)
    }

    /// Row-wise softmax of a T×T score matrix where row `i` only sees
    /// columns `0..=i`; future positions are exactly zero in the output.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (t, t2) = self.value(x).dim2()?;
        if t != t2 {
            return Err(LabError::Dimension(format!(
                "causal_softmax expects a square matrix, got {t}x{t2}"
            )));
        }
        self.value(x).validate_finite()?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            let mut lane: Vec<f64> = (0..=i).map(|j| xv[i * t + j]).collect();
            kernels::softmax_lane(&mut lane);
            out[i * t..i * t + i + 1].copy_from_slice(&lane);
        }
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(vec![t, t], out)?, rg);
        if rg {
            self.records.push(Record::CausalSoftmax { x, out: v });
        }
        Ok(v)
    }

    /// Applies rotary position rotation to each row of a T×d_head matrix;
    /// row `r` is rotated by the angles for position `r`.
    pub fn rope(&mut self, x: Var, table: &Arc<RotaryTable>) -> Result<Var> {
        let (t, d) = self.value(x).dim2()?;
        if d != table.half * 2 {
            return Err(LabError::Dimension(format!(
                "rope width {d} does not match table head width {}",
                table.half * 2
            )));
        }
        if t * table.half > table.cos.len() {
            return Err(LabError::Length(format!(
                "rope table covers {} positions, sequence needs {t}",
                table.cos.len() / table.half
            )));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            for p in 0..table.half {
                let c = table.cos[r * table.half + p];
                let s = table.sin[r * table.half + p];
                let x0 = xv[r * d + 2 * p];
                let x1 = xv[r * d + 2 * p + 1];
                out[r * d + 2 * p] = x0 * c - x1 * s;
                out[r * d + 2 * p + 1] = x0 * s + x1 * c;
            }
        }
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(vec![t, d], out)?, rg);
        if rg {
            self.records.push(Record::Rope { x, out: v, table: Arc::clone(table) });
        }
        Ok(v)
    }

    /// Gathers embedding rows: `out[t, :] = table[ids[t], :]`.
    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (vocab, d) = self.value(table).dim2()?;
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(LabError::Input(format!(
                "token id {bad} out of range for vocab size {vocab}"
            )));
        }
        if ids.is_empty() {
            return Err(LabError::Usage("embed needs at least one token".into()));
        }
        let tv = self.value(table).data();
        let mut out = vec![0.0; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            let row = &tv[id as usize * d..(id as usize + 1) * d];
            out[t * d..(t + 1) * d].copy_from_slice(row);
        }
        let rg = self.requires(table);
        let v = self.out_node(Tensor::new(vec![ids.len(), d], out)?, rg);
        if rg {
            self.records.push(Record::Embed { table, ids: ids.to_vec(), out: v });
        }
        Ok(v)
    }

    /// Contiguous column block `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dim2()?;
        if start + len > c {
            return Err(LabError::Dimension(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * len];
        for row in 0..r {
            out[row * len..(row + 1) * len]
                .copy_from_slice(&xv[row * c + start..row * c + start + len]);
        }
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(vec![r, len], out)?, rg);
        if rg {
            self.records.push(Record::SliceCols { x, start, len, out: v });
        }
        Ok(v)
    }

    /// Contiguous row block `[start, start+len)` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dim2()?;
        if start + len > r {
            return Err(LabError::Dimension(format!(
                "row slice {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(vec![len, c], out)?, rg);
        if rg {
            self.records.push(Record::SliceRows { x, start, len, out: v });
        }
        Ok(v)
    }

    /// One row of a 2-D tensor as a 1-D vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (r, c) = self.value(x).dim2()?;
        if index >= r {
            return Err(LabError::Usage(format!("row {index} out of range for {r} rows")));
        }
        let out = self.value(x).data()[index * c..(index + 1) * c].to_vec();
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(vec![c], out)?, rg);
        if rg {
            self.records.push(Record::Row { x, index, out: v });
        }
        Ok(v)
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(LabError::Usage("concat_cols needs at least one part".into()));
        }
        let (rows, _) = self.value(parts[0]).dim2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.value(p).dim2()?;
            if r != rows {
                return Err(LabError::Dimension(format!(
                    "concat_cols row counts disagree: {rows} vs {r}"
                )));
            }
            widths.push(c);
            total += c;
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0usize;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let pv = self.value(p).data();
            for row in 0..rows {
                out[row * total + offset..row * total + offset + w]
                    .copy_from_slice(&pv[row * w..(row + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        let v = self.out_node(Tensor::new(vec![rows, total], out)?, rg);
        if rg {
            self.records.push(Record::ConcatCols { parts: parts.to_vec(), out: v });
        }
        Ok(v)
    }

    /// Concatenates 1-D vectors (scalars count as length-1) into one vector.
    pub fn concat1d(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(LabError::Usage("concat1d needs at least one part".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() > 1 {
                return Err(LabError::Dimension(format!(
                    "concat1d expects vectors or scalars, got shape {:?}",
                    t.shape()
                )));
            }
            out.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        let n = out.len();
        let v = self.out_node(Tensor::new(vec![n], out)?, rg);
        if rg {
            self.records.push(Record::Concat1d { parts: parts.to_vec(), out: v });
        }
        Ok(v)
    }

    /// Mean of rows `[start, end)` of a 2-D tensor, as a 1-D vector.
    pub fn mean_rows_range(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dim2()?;
        if start >= end || end > r {
            return Err(LabError::Usage(format!(
                "mean over empty or out-of-range row span {start}..{end} (rows {r})"
            )));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; c];
        for row in start..end {
            for (o, &v) in out.iter_mut().zip(xv[row * c..(row + 1) * c].iter()) {
                *o += v;
            }
        }
        let inv = 1.0 / (end - start) as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        let rg = self.requires(x);
        let v = self.out_node(Tensor::new(vec![c], out)?, rg);
        if rg {
            self.records.push(Record::MeanRowsRange { x, start, end, out: v });
        }
        Ok(v)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        let v = self.out_node(Tensor::scalar(s), rg);
        if rg {
            self.records.push(Record::SumAll { x, out: v });
        }
        Ok(v)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, averaged over positions where `mask` is true.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[bool],
    ) -> Result<Var> {
        let (t, vocab) = self.value(logits).dim2()?;
        if targets.len() != t || mask.len() != t {
            return Err(LabError::Dimension(format!(
                "targets/mask length {}/{} does not match {t} positions",
                targets.len(),
                mask.len()
            )));
        }
        for (&tgt, &m) in targets.iter().zip(mask.iter()) {
            if m && tgt as usize >= vocab {
                return Err(LabError::Input(format!(
                    "target id {tgt} out of range for vocab size {vocab}"
                )));
            }
        }
        let active = mask.iter().filter(|&&m| m).count();
        if active == 0 {
            return Err(LabError::EmptyLoss(
                "cross_entropy_masked needs at least one unmasked position".into(),
            ));
        }
        self.value(logits).validate_finite()?;
        let lv = self.value(logits).data();
        let mut total = 0.0;
        for (pos, (&tgt, &m)) in targets.iter().zip(mask.iter()).enumerate() {
            if !m {
                continue;
            }
            let lane = &lv[pos * vocab..(pos + 1) * vocab];
            total += kernels::logsumexp(lane) - lane[tgt as usize];
        }
        let rg = self.requires(logits);
        let v = self.out_node(Tensor::scalar(total / active as f64), rg);
        if rg {
            self.records.push(Record::CrossEntropyMasked {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                out: v,
            });
        }
        Ok(v)
    }

    /// Cosine similarity of two vectors; differentiable through both.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        const NORM_FLOOR: f64 = 1e-12;
        let ut = self.value(u);
        let vt = self.value(v);
        if ut.shape() != vt.shape() || ut.shape().len() != 1 {
            return Err(LabError::Dimension(format!(
                "cosine_similarity expects equal-length vectors, got {:?} and {:?}",
                ut.shape(),
                vt.shape()
            )));
        }
        let nu = kernels::l2_norm(ut.data());
        let nv = kernels::l2_norm(vt.data());
        if nu <= NORM_FLOOR || nv <= NORM_FLOOR {
            return Err(LabError::DegenerateInput(format!(
                "cosine_similarity norms {nu:.3e}/{nv:.3e} below floor {NORM_FLOOR:.0e}"
            )));
        }
        let sim = kernels::dot(ut.data(), vt.data()) / (nu * nv);
        let rg = self.requires(u) || self.requires(v);
        let out = self.out_node(Tensor::scalar(sim), rg);
        if rg {
            self.records.push(Record::CosineSim { u, v, out });
        }
        Ok(out)
    }

    /// `-log softmax(x)[index]` for a 1-D vector of scores.
    pub fn neg_log_softmax_pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 1 {
            return Err(LabError::Dimension(format!(
                "neg_log_softmax_pick expects a vector, got shape {:?}",
                t.shape()
            )));
        }
        if index >= t.numel() {
            return Err(LabError::Usage(format!(
                "pick index {index} out of range for {} entries",
                t.numel()
            )));
        }
        t.validate_finite()?;
        let loss = kernels::logsumexp(t.data()) - t.data()[index];
        let rg = self.requires(x);
        let out = self.out_node(Tensor::scalar(loss), rg);
        if rg {
            self.records.push(Record::NegLogSoftmaxPick { x, index, out });
        }
        Ok(out)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Accumulates gradients for every grad-requiring tensor reachable from
    /// `loss`. Repeated calls without a fresh tape accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(LabError::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.accumulate(loss, &[1.0]);
        for idx in (0..self.records.len()).rev() {
            // Each node is the output of exactly one record, so its gradient
            // is complete by the time its producer is visited; take it.
            let out = record_out(&self.records[idx]);
            let Some(go) = self.nodes[out.0].grad.take() else { continue };
            self.step_backward(idx, &go)?;
        }
        Ok(())
    }

    fn step_backward(&mut self, idx: usize, go: &[f64]) -> Result<()> {
        // Records are moved out and restored so input values can be read
        // while gradients are written.
        match &self.records[idx] {
            &Record::Matmul { a, b, out: _ } => {
                let (m, k) = self.value(a).dim2()?;
                let n = self.value(b).cols()?;
                if self.requires(a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::mm_nt(go, self.value(b).data(), m, n, k, &mut ga);
                    self.accumulate(a, &ga);
                }
                if self.requires(b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::mm_tn(self.value(a).data(), go, k, m, n, &mut gb);
                    self.accumulate(b, &gb);
                }
            }
            &Record::MatmulNT { a, b, out: _ } => {
                let (m, k) = self.value(a).dim2()?;
                let n = self.value(b).rows()?;
                if self.requires(a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::mm_nn(go, self.value(b).data(), m, n, k, &mut ga);
                    self.accumulate(a, &ga);
                }
                if self.requires(b) {
                    let mut gb = vec![0.0; n * k];
                    kernels::mm_tn(go, self.value(a).data(), n, m, k, &mut gb);
                    self.accumulate(b, &gb);
                }
            }
            &Record::Add { a, b, out: _ } => {
                self.accumulate(a, go);
                self.accumulate(b, go);
            }
            &Record::Mul { a, b, out: _ } => {
                if self.requires(a) {
                    let ga: Vec<f64> =
                        go.iter().zip(self.value(b).data().iter()).map(|(&g, &y)| g * y).collect();
                    self.accumulate(a, &ga);
                }
                if self.requires(b) {
                    let gb: Vec<f64> =
                        go.iter().zip(self.value(a).data().iter()).map(|(&g, &x)| g * x).collect();
                    self.accumulate(b, &gb);
                }
            }
            &Record::Scale { x, c, out: _ } => {
                let gx: Vec<f64> = go.iter().map(|&g| g * c).collect();
                self.accumulate(x, &gx);
            }
            &Record::Silu { x, out: _ } => {
                let gx: Vec<f64> = go
                    .iter()
                    .zip(self.value(x).data().iter())
                    .map(|(&g, &v)| g * kernels::silu_derivative(v))
                    .collect();
                self.accumulate(x, &gx);
            }
            Record::RmsNorm { x, w, out: _, rms } => {
                let (x, w, rms) = (*x, *w, rms.clone());
                let (t, d) = self.value(x).dim2()?;
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let mut gx = vec![0.0; t * d];
                let mut gw = vec![0.0; d];
                for r in 0..t {
                    let denom = rms[r];
                    let row = &xv[r * d..(r + 1) * d];
                    let grow = &go[r * d..(r + 1) * d];
                    let mut s = 0.0;
                    for j in 0..d {
                        s += grow[j] * wv[j] * row[j];
                        gw[j] += grow[j] * row[j] / denom;
                    }
                    let coeff = s / (d as f64 * denom * denom * denom);
                    for j in 0..d {
                        gx[r * d + j] = grow[j] * wv[j] / denom - row[j] * coeff;
                    }
                }
                if self.requires(x) {
                    self.accumulate(x, &gx);
                }
                if self.requires(w) {
                    self.accumulate(w, &gw);
                }
            }
            &Record::Softmax { x, axis, out } => {
                let shape = self.value(out).shape().to_vec();
                let yv = self.value(out).data().to_vec();
                let mut gx = vec![0.0; yv.len()];
                for_each_lane(&shape, axis, |lane_idx| {
                    let inner: f64 = lane_idx.iter().map(|&i| go[i] * yv[i]).sum();
                    for &i in lane_idx {
                        gx[i] = yv[i] * (go[i] - inner);
                    }
                });
                self.accumulate(x, &gx);
            }
            &Record::CausalSoftmax { x, out } => {
                let t = self.value(out).rows()?;
                let yv = self.value(out).data();
                let mut gx = vec![0.0; t * t];
                for i in 0..t {
                    let row = &yv[i * t..i * t + i + 1];
                    let grow = &go[i * t..i * t + i + 1];
                    let inner: f64 = row.iter().zip(grow.iter()).map(|(&y, &g)| y * g).sum();
                    for j in 0..=i {
                        gx[i * t + j] = row[j] * (grow[j] - inner);
                    }
                }
                self.accumulate(x, &gx);
            }
            Record::Rope { x, out: _, table } => {
                let (x, table) = (*x, Arc::clone(table));
                let (t, d) = self.value(x).dim2()?;
                let mut gx = vec![0.0; t * d];
                for r in 0..t {
                    for p in 0..table.half {
                        let c = table.cos[r * table.half + p];
                        let s = table.sin[r * table.half + p];
                        let g0 = go[r * d + 2 * p];
                        let g1 = go[r * d + 2 * p + 1];
                        // Inverse rotation.
                        gx[r * d + 2 * p] = g0 * c + g1 * s;
                        gx[r * d + 2 * p + 1] = -g0 * s + g1 * c;
                    }
                }
                self.accumulate(x, &gx);
            }
            Record::Embed { table, ids, out: _ } => {
                let (table, ids) = (*table, ids.clone());
                let d = self.value(table).cols()?;
                let mut gt = vec![0.0; self.value(table).numel()];
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id as usize * d + j] += go[t * d + j];
                    }
                }
                self.accumulate(table, &gt);
            }
            &Record::SliceCols { x, start, len, out: _ } => {
                let (r, c) = self.value(x).dim2()?;
                let mut gx = vec![0.0; r * c];
                for row in 0..r {
                    gx[row * c + start..row * c + start + len]
                        .copy_from_slice(&go[row * len..(row + 1) * len]);
                }
                self.accumulate(x, &gx);
            }
            &Record::SliceRows { x, start, len, out: _ } => {
                let (r, c) = self.value(x).dim2()?;
                let mut gx = vec![0.0; r * c];
                gx[start * c..(start + len) * c].copy_from_slice(go);
                self.accumulate(x, &gx);
            }
            &Record::Row { x, index, out: _ } => {
                let (r, c) = self.value(x).dim2()?;
                let mut gx = vec![0.0; r * c];
                gx[index * c..(index + 1) * c].copy_from_slice(go);
                self.accumulate(x, &gx);
            }
            Record::ConcatCols { parts, out: _ } => {
                let parts = parts.clone();
                let mut offset = 0usize;
                let total: usize = parts
                    .iter()
                    .map(|&p| self.value(p).cols().unwrap_or(0))
                    .sum();
                for &p in &parts {
                    let (r, w) = self.value(p).dim2()?;
                    if self.requires(p) {
                        let mut gp = vec![0.0; r * w];
                        for row in 0..r {
                            gp[row * w..(row + 1) * w].copy_from_slice(
                                &go[row * total + offset..row * total + offset + w],
                            );
                        }
                        self.accumulate(p, &gp);
                    }
                    offset += w;
                }
            }
            Record::Concat1d { parts, out: _ } => {
                let parts = parts.clone();
                let mut offset = 0usize;
                for &p in &parts {
                    let n = self.value(p).numel();
                    if self.requires(p) {
                        self.accumulate(p, &go[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            &Record::MeanRowsRange { x, start, end, out: _ } => {
                let (r, c) = self.value(x).dim2()?;
                let inv = 1.0 / (end - start) as f64;
                let mut gx = vec![0.0; r * c];
                for row in start..end {
                    for j in 0..c {
                        gx[row * c + j] = go[j] * inv;
                    }
                }
                self.accumulate(x, &gx);
            }
            &Record::SumAll { x, out: _ } => {
                let gx = vec![go[0]; self.value(x).numel()];
                self.accumulate(x, &gx);
            }
            Record::CrossEntropyMasked { logits, targets, mask, out: _ } => {
                let (logits, targets, mask) = (*logits, targets.clone(), mask.clone());
                let (t, vocab) = self.value(logits).dim2()?;
                let lv = self.value(logits).data();
                let active = mask.iter().filter(|&&m| m).count() as f64;
                let g = go[0] / active;
                let mut gl = vec![0.0; t * vocab];
                for pos in 0..t {
                    if !mask[pos] {
                        continue;
                    }
                    let lane = &lv[pos * vocab..(pos + 1) * vocab];
                    let mut probs = lane.to_vec();
                    kernels::softmax_lane(&mut probs);
                    for (j, p) in probs.iter().enumerate() {
                        gl[pos * vocab + j] = g * p;
                    }
                    gl[pos * vocab + targets[pos] as usize] -= g;
                }
                self.accumulate(logits, &gl);
            }
            &Record::CosineSim { u, v, out } => {
                let g = go[0];
                let sim = self.value(out).data()[0];
                let uv = self.value(u).data().to_vec();
                let vv = self.value(v).data().to_vec();
                let nu = kernels::l2_norm(&uv);
                let nv = kernels::l2_norm(&vv);
                if self.requires(u) {
                    let gu: Vec<f64> = uv
                        .iter()
                        .zip(vv.iter())
                        .map(|(&x, &y)| g * (y / (nu * nv) - sim * x / (nu * nu)))
                        .collect();
                    self.accumulate(u, &gu);
                }
                if self.requires(v) {
                    let gv: Vec<f64> = uv
                        .iter()
                        .zip(vv.iter())
                        .map(|(&x, &y)| g * (x / (nu * nv) - sim * y / (nv * nv)))
                        .collect();
                    self.accumulate(v, &gv);
                }
            }
            &Record::NegLogSoftmaxPick { x, index, out: _ } => {
                let g = go[0];
                let mut probs = self.value(x).data().to_vec();
                kernels::softmax_lane(&mut probs);
                let mut gx: Vec<f64> = probs.iter().map(|&p| g * p).collect();
                gx[index] -= g;
                self.accumulate(x, &gx);
            }
        }
        Ok(())
    }
}

fn record_out(r: &Record) -> Var {
    match r {
        Record::Matmul { out, .. }
        | Record::MatmulNT { out, .. }
        | Record::Add { out, .. }
        | Record::Mul { out, .. }
        | Record::Scale { out, .. }
        | Record::Silu { out, .. }
        | Record::RmsNorm { out, .. }
        | Record::Softmax { out, .. }
        | Record::CausalSoftmax { out, .. }
        | Record::Rope { out, .. }
        | Record::Embed { out, .. }
        | Record::SliceCols { out, .. }
        | Record::SliceRows { out, .. }
        | Record::Row { out, .. }
        | Record::ConcatCols { out, .. }
        | Record::Concat1d { out, .. }
        | Record::MeanRowsRange { out, .. }
        | Record::SumAll { out, .. }
        | Record::CrossEntropyMasked { out, .. }
        | Record::CosineSim { out, .. }
        | Record::NegLogSoftmaxPick { out, .. } => *out,
    }
}

/// Invokes `f` with the flat indices of each slice along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut idx = Vec::with_capacity(axis_len);
    for o in 0..outer {
        for i in 0..inner {
            idx.clear();
            for a in 0..axis_len {
                idx.push(o * axis_len * inner + a * inner + i);
            }
            f(&idx);
        }
    }
}
