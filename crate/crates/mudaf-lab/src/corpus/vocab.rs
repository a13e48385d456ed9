//! Closed whitespace-delimited vocabulary over the synthetic grammar.
//!
//! Ids are stable across runs because the table is built in a fixed order:
//! specials, template words, entities, objects, locations.

use std::collections::HashMap;

use super::grammar;
use crate::error::{LabError, Result};

/// Total vocabulary size for the fixed grammar; frozen as a regression
/// constant (4 specials + 27 template words + 3 pools of 24).
pub const VOCAB_SIZE: usize = 103;

#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_words(words: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let prev = index.insert(w.clone(), i as u32);
            debug_assert!(prev.is_none(), "duplicate vocab word {w}");
        }
        Vocab { words, index }
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Result<u32> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| LabError::Input(format!("word '{word}' not in vocabulary")))
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| LabError::Input(format!("token id {id} out of range")))
    }

    pub fn eos_id(&self) -> u32 {
        self.index[grammar::EOS]
    }

    /// Whitespace tokenization into ids; unknown words are input errors.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn encode_words(&self, words: &[String]) -> Result<Vec<u32>> {
        words.iter().map(|w| self.id(w)).collect()
    }

    /// Joins token words with single spaces; inverse of `encode` on any
    /// rendered prompt.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids.iter().map(|&id| self.word(id)).collect();
        Ok(words?.join(" "))
    }
}

/// Builds the closed vocabulary for a corpus configuration. The grammar is
/// fixed, so every configuration shares the same table.
pub fn build_vocab(_config: &super::CorpusConfig) -> Vocab {
    let mut words: Vec<String> = Vec::with_capacity(VOCAB_SIZE);
    words.extend(grammar::SPECIALS.iter().map(|s| s.to_string()));
    words.extend(grammar::TEMPLATE_WORDS.iter().map(|s| s.to_string()));
    words.extend(grammar::ENTITIES.iter().map(|s| s.to_string()));
    words.extend(grammar::OBJECTS.iter().map(|s| s.to_string()));
    words.extend(grammar::LOCATIONS.iter().map(|s| s.to_string()));
    Vocab::from_words(words)
}
