//! Desk-scale laboratory for studying and training retrieval heads in a
//! from-scratch decoder transformer.
//!
//! The crate bundles the full pipeline: a tape-based autodiff engine with a
//! finite-difference oracle ([`tensor`]), a small pre-norm rotary decoder
//! with per-head attention tracing and masking ([`model`]), a deterministic
//! synthetic multi-document QA corpus with exact token spans ([`corpus`]),
//! per-head retrieval scoring and masking ablations ([`analysis`]),
//! score-weighted target-head selection ([`selection`]), and joint
//! causal-LM + head-level contrastive training ([`train`]). The [`cli`]
//! module ties everything into reproducible experiments.
//!
//! The companion guide under `book/` walks through each concept; its code
//! snippets compile and run as doc-tests.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod model;
pub mod selection;
pub mod tensor;
pub mod train;

pub use error::{LabError, Result};

/// Mixes a master seed with a stream tag so independent random streams can
/// be derived from one experiment seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// The book's code snippets double as doc-tests so the guide cannot drift
// from the library.
#[doc = include_str!("../../../book/src/introduction.md")]
#[cfg(doctest)]
pub struct BookIntroduction;

#[doc = include_str!("../../../book/src/tensors-and-gradients.md")]
#[cfg(doctest)]
pub struct BookTensorsAndGradients;

#[doc = include_str!("../../../book/src/model.md")]
#[cfg(doctest)]
pub struct BookModel;

#[doc = include_str!("../../../book/src/corpus.md")]
#[cfg(doctest)]
pub struct BookCorpus;

#[doc = include_str!("../../../book/src/retrieval-heads.md")]
#[cfg(doctest)]
pub struct BookRetrievalHeads;

#[doc = include_str!("../../../book/src/head-selection.md")]
#[cfg(doctest)]
pub struct BookHeadSelection;

#[doc = include_str!("../../../book/src/training.md")]
#[cfg(doctest)]
pub struct BookTraining;

#[doc = include_str!("../../../book/src/cli.md")]
#[cfg(doctest)]
pub struct BookCli;
