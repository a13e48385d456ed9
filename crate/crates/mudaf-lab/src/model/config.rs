//! Architecture hyperparameters and head addressing.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Key/value heads per layer; divides `n_heads`. Equal to `n_heads`
    /// for plain multi-head attention.
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// MLP hidden width as a multiple of `d_model`.
    pub mlp_mult: usize,
}

impl ModelConfig {
    /// Default desk-scale model: 4 layers x 8 heads, 32 heads to rank.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 8,
            n_kv_heads: 4,
            d_model: 128,
            d_head: 16,
            vocab_size,
            max_seq_len: 512,
            mlp_mult: 2,
        }
    }

    /// 2-layer, 4-head model small enough for full finite-difference checks.
    pub fn micro(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 2,
            d_model: 16,
            d_head: 4,
            vocab_size,
            max_seq_len: 64,
            mlp_mult: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.vocab_size == 0 {
            return Err(LabError::Config("layer/head/vocab counts must be positive".into()));
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(LabError::Config(format!(
                "n_heads * d_head = {} must equal d_model = {}",
                self.n_heads * self.d_head,
                self.d_model
            )));
        }
        if self.n_kv_heads == 0 || self.n_heads % self.n_kv_heads != 0 {
            return Err(LabError::Config(format!(
                "n_kv_heads {} must divide n_heads {}",
                self.n_kv_heads, self.n_heads
            )));
        }
        if self.d_head % 2 != 0 {
            return Err(LabError::Config(format!(
                "d_head {} must be even for rotary embeddings",
                self.d_head
            )));
        }
        if self.max_seq_len == 0 || self.mlp_mult == 0 {
            return Err(LabError::Config("max_seq_len and mlp_mult must be positive".into()));
        }
        Ok(())
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.d_head
    }

    pub fn mlp_dim(&self) -> usize {
        self.d_model * self.mlp_mult
    }

    pub fn heads_per_group(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// All head ids, ordered by (layer, head).
    pub fn all_heads(&self) -> Vec<HeadId> {
        (0..self.n_layers)
            .flat_map(|l| (0..self.n_heads).map(move |h| HeadId { layer: l, head: h }))
            .collect()
    }

    pub fn head_in_range(&self, head: HeadId) -> bool {
        head.layer < self.n_layers && head.head < self.n_heads
    }
}

/// Addresses one attention head as (layer, head-within-layer).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl std::fmt::Display for HeadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.layer, self.head)
    }
}

/// Key/value group of a head: heads in one group share one K/V projection.
pub fn kv_group_of(head: HeadId, config: &ModelConfig) -> usize {
    head.head / config.heads_per_group()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        assert!(ModelConfig::toy(105).validate().is_ok());
        assert!(ModelConfig::micro(105).validate().is_ok());
    }

    #[test]
    fn head_width_mismatch_is_rejected() {
        let mut c = ModelConfig::toy(105);
        c.d_head = 15;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_heads_must_divide_heads() {
        let mut c = ModelConfig::toy(105);
        c.n_kv_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mha_degenerate_case_gives_one_group_per_head() {
        let mut c = ModelConfig::toy(105);
        c.n_kv_heads = c.n_heads;
        for h in 0..c.n_heads {
            assert_eq!(kv_group_of(HeadId { layer: 0, head: h }, &c), h);
        }
    }

    #[test]
    fn eight_heads_two_groups_split_by_integer_division() {
        let mut c = ModelConfig::toy(105);
        c.n_kv_heads = 2;
        for h in 0..4 {
            assert_eq!(kv_group_of(HeadId { layer: 1, head: h }, &c), 0);
        }
        for h in 4..8 {
            assert_eq!(kv_group_of(HeadId { layer: 1, head: h }, &c), 1);
        }
    }
}
