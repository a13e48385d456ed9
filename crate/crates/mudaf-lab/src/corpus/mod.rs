//! Deterministic synthetic multi-document QA generator with exact token-span
//! bookkeeping.
//!
//! Passages are single-fact (or few-fact) sentences over closed pools of
//! entities, objects and locations. Exactly the golden passages carry the
//! queried fact; distractors reuse the same schema with other entities (hard
//! negatives), and the answer token sequence never appears outside golden
//! passages. Everything is a pure function of `(config, seed)`.

pub mod grammar;
pub mod vocab;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{LabError, Result};
pub use vocab::{build_vocab, Vocab, VOCAB_SIZE};

/// Which synthetic task a sample poses.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// One entity→location fact must be looked up among distractor facts.
    Mdqa,
    /// Copy-paste probe: find the secret word planted in one passage.
    Niah,
    /// Two chained facts (giver→receiver, receiver→location) are both golden.
    TwoHop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_passages: usize,
    pub n_golden: usize,
    /// Fact sentences per passage; the golden passage carries the queried
    /// fact plus `facts_per_passage - 1` fillers.
    pub facts_per_passage: usize,
    pub task: TaskKind,
    /// Rendered prompts longer than this are a length error.
    pub max_prompt_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_passages: 10,
            n_golden: 1,
            facts_per_passage: 1,
            task: TaskKind::Mdqa,
            max_prompt_len: 512,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_passages == 0 || self.facts_per_passage == 0 {
            return Err(LabError::Config("passage and fact counts must be positive".into()));
        }
        if self.n_golden > self.n_passages {
            return Err(LabError::Config(format!(
                "n_golden {} exceeds n_passages {}",
                self.n_golden, self.n_passages
            )));
        }
        match self.task {
            TaskKind::Mdqa | TaskKind::Niah => {
                if self.n_golden != 1 {
                    return Err(LabError::Config(format!(
                        "{:?} task requires exactly one golden passage, got {}",
                        self.task, self.n_golden
                    )));
                }
            }
            TaskKind::TwoHop => {
                if self.n_golden != 2 {
                    return Err(LabError::Config(
                        "two-hop task requires exactly two golden passages".into(),
                    ));
                }
                if self.facts_per_passage != 1 {
                    return Err(LabError::Config(
                        "two-hop task supports one fact per passage".into(),
                    ));
                }
                if self.n_passages < 2 {
                    return Err(LabError::Config("two-hop task needs at least 2 passages".into()));
                }
            }
        }
        // Every fact draws fresh pool words so the answer cannot leak.
        let demand = self.pool_demand();
        let cap = grammar::ENTITIES.len();
        if demand > cap {
            return Err(LabError::Config(format!(
                "config needs {demand} distinct pool words but pools hold {cap}"
            )));
        }
        Ok(())
    }

    fn pool_demand(&self) -> usize {
        match self.task {
            TaskKind::Mdqa => self.n_passages * self.facts_per_passage,
            TaskKind::Niah => (self.n_passages - 1) * self.facts_per_passage + 1,
            TaskKind::TwoHop => {
                let d = self.n_passages - 2;
                let gives = d.div_ceil(2);
                2 + 2 * gives + (d - gives)
            }
        }
    }
}

/// One passage of a rendered sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub tokens: Vec<u32>,
    pub is_golden: bool,
    /// Entity pool indices mentioned in this passage.
    pub entities: Vec<usize>,
    /// Token span within the rendered prompt, half-open.
    pub span: (usize, usize),
}

/// Exact token geometry of a rendered prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub tokens: Vec<u32>,
    pub passage_spans: Vec<(usize, usize)>,
    pub question_span: (usize, usize),
    /// Final token of the question text, before the answer cue.
    pub question_last_token_index: usize,
    pub answer_span: (usize, usize),
    /// Final input token: the answer-cue token right before the answer.
    pub prompt_last_token_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdqaSample {
    pub passages: Vec<Passage>,
    pub question: Vec<u32>,
    pub answer: Vec<u32>,
    pub golden_indices: BTreeSet<usize>,
    pub layout: PromptLayout,
}

impl MdqaSample {
    /// True when the answer token sequence appears nowhere outside golden
    /// passages (answer-leakage freedom).
    pub fn answer_leakage_free(&self) -> bool {
        self.passages
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.golden_indices.contains(i))
            .all(|(_, p)| !contains_subsequence(&p.tokens, &self.answer))
    }
}

fn contains_subsequence(haystack: &[u32], needle: &[u32]) -> bool {
    if needle.is_empty() || haystack.len() < needle.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// A validated configuration plus its vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    config: CorpusConfig,
    vocab: Vocab,
}

struct FactSet {
    /// Token lists per passage, pre-shuffle; golden passages first.
    passages: Vec<(Vec<u32>, bool, Vec<usize>)>,
    question: Vec<u32>,
    answer: Vec<u32>,
}

impl Corpus {
    pub fn new(config: CorpusConfig) -> Result<Self> {
        config.validate()?;
        let vocab = build_vocab(&config);
        Ok(Corpus { config, vocab })
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Deterministically generates one sample for `(config, seed)`.
    pub fn generate_sample(&self, seed: u64) -> Result<MdqaSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut facts = match self.config.task {
            TaskKind::Mdqa => self.build_mdqa(&mut rng)?,
            TaskKind::Niah => self.build_niah(&mut rng)?,
            TaskKind::TwoHop => self.build_two_hop(&mut rng)?,
        };
        permute_in_place(&mut facts.passages, &mut rng);
        self.assemble(facts)
    }

    /// Generates `n` samples with per-sample seeds derived from one master.
    pub fn generate_many(&self, n: usize, master_seed: u64) -> Result<Vec<MdqaSample>> {
        (0..n)
            .map(|i| self.generate_sample(derive_seed(master_seed, i as u64)))
            .collect()
    }

    /// Returns the sample with passage order permuted by `seed`; golden
    /// flags follow their passages and the layout is re-rendered.
    pub fn shuffle_passages(&self, sample: &MdqaSample, seed: u64) -> Result<MdqaSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut passages: Vec<(Vec<u32>, bool, Vec<usize>)> = sample
            .passages
            .iter()
            .map(|p| (p.tokens.clone(), p.is_golden, p.entities.clone()))
            .collect();
        permute_in_place(&mut passages, &mut rng);
        self.assemble(FactSet {
            passages,
            question: sample.question.clone(),
            answer: sample.answer.clone(),
        })
    }

    /// Renders a sample's parts into the prompt template, recording spans
    /// against the final tokenization.
    pub fn render_prompt(&self, sample: &MdqaSample) -> Result<PromptLayout> {
        self.render_parts(
            &sample
                .passages
                .iter()
                .map(|p| p.tokens.as_slice())
                .collect::<Vec<_>>(),
            &sample.question,
            &sample.answer,
        )
    }

    fn assemble(&self, facts: FactSet) -> Result<MdqaSample> {
        let parts: Vec<&[u32]> = facts.passages.iter().map(|(t, _, _)| t.as_slice()).collect();
        let layout = self.render_parts(&parts, &facts.question, &facts.answer)?;
        let golden_indices: BTreeSet<usize> = facts
            .passages
            .iter()
            .enumerate()
            .filter(|(_, (_, g, _))| *g)
            .map(|(i, _)| i)
            .collect();
        let passages = facts
            .passages
            .into_iter()
            .zip(layout.passage_spans.iter())
            .map(|((tokens, is_golden, entities), &span)| Passage {
                tokens,
                is_golden,
                entities,
                span,
            })
            .collect();
        Ok(MdqaSample {
            passages,
            question: facts.question,
            answer: facts.answer,
            golden_indices,
            layout,
        })
    }

    fn render_parts(
        &self,
        passages: &[&[u32]],
        question: &[u32],
        answer: &[u32],
    ) -> Result<PromptLayout> {
        let v = &self.vocab;
        let mut tokens: Vec<u32> = Vec::new();
        for w in grammar::INSTRUCTION {
            tokens.push(v.id(w)?);
        }
        tokens.push(v.id(grammar::PASSAGES_OPEN)?);
        let mut passage_spans = Vec::with_capacity(passages.len());
        for body in passages {
            tokens.push(v.id(grammar::PASSAGE_MARK)?);
            let start = tokens.len();
            tokens.extend_from_slice(body);
            passage_spans.push((start, tokens.len()));
        }
        tokens.push(v.id(grammar::PASSAGES_CLOSE)?);
        for w in grammar::QUESTION_CUE {
            tokens.push(v.id(w)?);
        }
        let q_start = tokens.len();
        tokens.extend_from_slice(question);
        let question_span = (q_start, tokens.len());
        let question_last_token_index = tokens.len() - 1;
        for w in grammar::ANSWER_CUE {
            tokens.push(v.id(w)?);
        }
        let prompt_last_token_index = tokens.len() - 1;
        let a_start = tokens.len();
        tokens.extend_from_slice(answer);
        let answer_span = (a_start, tokens.len());
        tokens.push(v.eos_id());
        if tokens.len() > self.config.max_prompt_len {
            return Err(LabError::Length(format!(
                "rendered prompt has {} tokens, limit is {}",
                tokens.len(),
                self.config.max_prompt_len
            )));
        }
        Ok(PromptLayout {
            tokens,
            passage_spans,
            question_span,
            question_last_token_index,
            answer_span,
            prompt_last_token_index,
        })
    }

    fn build_mdqa(&self, rng: &mut ChaCha8Rng) -> Result<FactSet> {
        let fpp = self.config.facts_per_passage;
        let total = self.config.n_passages * fpp;
        let entities = draw_distinct(grammar::ENTITIES.len(), total, rng);
        let objects = draw_distinct(grammar::OBJECTS.len(), total, rng);
        let locations = draw_distinct(grammar::LOCATIONS.len(), total, rng);
        let sentence = |f: usize| {
            grammar::fact_sentence(
                grammar::ENTITIES[entities[f]],
                grammar::OBJECTS[objects[f]],
                grammar::LOCATIONS[locations[f]],
            )
        };
        let mut passages = Vec::with_capacity(self.config.n_passages);
        for p in 0..self.config.n_passages {
            let mut fact_ids: Vec<usize> = (p * fpp..(p + 1) * fpp).collect();
            permute_in_place(&mut fact_ids, rng);
            let mut tokens = Vec::new();
            let mut mentioned = Vec::new();
            for f in fact_ids {
                tokens.extend(self.vocab.encode_words(&sentence(f))?);
                mentioned.push(entities[f]);
            }
            passages.push((tokens, p == 0, mentioned));
        }
        let question =
            self.vocab.encode_words(&grammar::fact_question(grammar::OBJECTS[objects[0]]))?;
        let answer = vec![self.vocab.id(grammar::LOCATIONS[locations[0]])?];
        Ok(FactSet { passages, question, answer })
    }

    fn build_niah(&self, rng: &mut ChaCha8Rng) -> Result<FactSet> {
        let fpp = self.config.facts_per_passage;
        let dtotal = (self.config.n_passages - 1) * fpp;
        let objects = draw_distinct(grammar::OBJECTS.len(), dtotal + 1, rng);
        let entities = draw_distinct(grammar::ENTITIES.len(), dtotal, rng);
        let locations = draw_distinct(grammar::LOCATIONS.len(), dtotal, rng);
        let word = grammar::OBJECTS[objects[0]];

        let mut passages = Vec::with_capacity(self.config.n_passages);
        passages.push((
            self.vocab.encode_words(&grammar::needle_sentence(word))?,
            true,
            Vec::new(),
        ));
        for p in 0..self.config.n_passages - 1 {
            let mut tokens = Vec::new();
            let mut mentioned = Vec::new();
            for f in p * fpp..(p + 1) * fpp {
                tokens.extend(self.vocab.encode_words(&grammar::fact_sentence(
                    grammar::ENTITIES[entities[f]],
                    grammar::OBJECTS[objects[f + 1]],
                    grammar::LOCATIONS[locations[f]],
                ))?);
                mentioned.push(entities[f]);
            }
            passages.push((tokens, false, mentioned));
        }
        let question = self.vocab.encode_words(&grammar::needle_question())?;
        let answer = vec![self.vocab.id(word)?];
        Ok(FactSet { passages, question, answer })
    }

    fn build_two_hop(&self, rng: &mut ChaCha8Rng) -> Result<FactSet> {
        let d = self.config.n_passages - 2;
        let gives = d.div_ceil(2);
        let hides = d - gives;
        let entities = draw_distinct(grammar::ENTITIES.len(), 2 + 2 * gives + hides, rng);
        let objects = draw_distinct(grammar::OBJECTS.len(), 1 + gives, rng);
        let locations = draw_distinct(grammar::LOCATIONS.len(), 1 + hides, rng);

        let giver = grammar::ENTITIES[entities[0]];
        let receiver = grammar::ENTITIES[entities[1]];
        let object = grammar::OBJECTS[objects[0]];
        let location = grammar::LOCATIONS[locations[0]];

        let mut passages = Vec::with_capacity(self.config.n_passages);
        passages.push((
            self.vocab.encode_words(&grammar::give_sentence(giver, object, receiver))?,
            true,
            vec![entities[0], entities[1]],
        ));
        passages.push((
            self.vocab.encode_words(&grammar::hide_sentence(receiver, location))?,
            true,
            vec![entities[1]],
        ));
        let mut e_next = 2;
        for i in 0..d {
            if i % 2 == 0 {
                let g = grammar::ENTITIES[entities[e_next]];
                let r = grammar::ENTITIES[entities[e_next + 1]];
                let o = grammar::OBJECTS[objects[1 + i / 2]];
                passages.push((
                    self.vocab.encode_words(&grammar::give_sentence(g, o, r))?,
                    false,
                    vec![entities[e_next], entities[e_next + 1]],
                ));
                e_next += 2;
            } else {
                let e = grammar::ENTITIES[entities[e_next]];
                let l = grammar::LOCATIONS[locations[1 + i / 2]];
                passages.push((
                    self.vocab.encode_words(&grammar::hide_sentence(e, l))?,
                    false,
                    vec![entities[e_next]],
                ));
                e_next += 1;
            }
        }
        let question = self.vocab.encode_words(&grammar::chain_question(object, giver))?;
        let answer = vec![self.vocab.id(location)?];
        Ok(FactSet { passages, question, answer })
    }
}

/// Spec-level convenience: builds the corpus and generates one sample.
pub fn generate_sample(config: &CorpusConfig, seed: u64) -> Result<MdqaSample> {
    Corpus::new(config.clone())?.generate_sample(seed)
}

/// First `n` positions of a Fisher–Yates permutation of `0..pool`.
fn draw_distinct(pool: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(n <= pool);
    let mut idx: Vec<usize> = (0..pool).collect();
    for i in 0..n {
        let j = rng.gen_range(i..pool);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// Uniform Fisher–Yates shuffle.
fn permute_in_place<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Writes one JSON sample per line.
pub fn save_jsonl(samples: &[MdqaSample], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| LabError::Format(e.to_string()))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(&out).map_err(|e| LabError::io(path, e))?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<MdqaSample>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| LabError::Format(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_corpus() -> Corpus {
        Corpus::new(CorpusConfig::default()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let c = default_corpus();
        assert_eq!(c.generate_sample(42).unwrap(), c.generate_sample(42).unwrap());
        assert_ne!(c.generate_sample(42).unwrap(), c.generate_sample(43).unwrap());
    }

    #[test]
    fn exactly_one_passage_contains_the_answer() {
        let c = default_corpus();
        for seed in 0..50 {
            let s = c.generate_sample(seed).unwrap();
            let holders: Vec<usize> = s
                .passages
                .iter()
                .enumerate()
                .filter(|(_, p)| contains_subsequence(&p.tokens, &s.answer))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(holders.len(), 1, "seed {seed}");
            assert!(s.golden_indices.contains(&holders[0]));
            assert!(s.answer_leakage_free());
        }
    }

    #[test]
    fn golden_position_is_uniform_over_seeds() {
        let c = default_corpus();
        let n = 1000;
        let slots = c.config.n_passages;
        let mut counts = vec![0usize; slots];
        for seed in 0..n {
            let s = c.generate_sample(seed).unwrap();
            counts[*s.golden_indices.iter().next().unwrap()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .map(|&k| (k as f64 / n as f64 - 1.0 / slots as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.05, "total variation {tv} above bound");
    }

    #[test]
    fn spans_partition_the_passage_block() {
        let c = default_corpus();
        let s = c.generate_sample(7).unwrap();
        let len = s.layout.tokens.len();
        let mut prev_end = 0;
        for &(start, end) in &s.layout.passage_spans {
            assert!(start < end && end <= len);
            assert!(start >= prev_end, "spans must be disjoint and ordered");
            prev_end = end;
        }
        // Every prompt token is counted exactly once as passage or residual.
        let in_passages: usize = s.layout.passage_spans.iter().map(|(a, b)| b - a).sum();
        let outside = len - in_passages;
        assert_eq!(in_passages + outside, len);
    }

    #[test]
    fn golden_span_detokenizes_to_its_source_text() {
        let c = default_corpus();
        let s = c.generate_sample(3).unwrap();
        let g = *s.golden_indices.iter().next().unwrap();
        let (start, end) = s.passages[g].span;
        let from_prompt = c.vocab().decode(&s.layout.tokens[start..end]).unwrap();
        let from_passage = c.vocab().decode(&s.passages[g].tokens).unwrap();
        assert_eq!(from_prompt, from_passage);
    }

    #[test]
    fn micro_sample_layout_indices_by_hand() {
        // 2 passages, 1 fact each: instruction(10) <passages>(1) then
        // [<p> + 8-token fact] twice, </passages>, cue(2), question(5),
        // cue(2), answer(1), <eos>.
        let c = Corpus::new(CorpusConfig {
            n_passages: 2,
            ..CorpusConfig::default()
        })
        .unwrap();
        let s = c.generate_sample(0).unwrap();
        assert_eq!(s.layout.tokens.len(), 41);
        assert_eq!(s.layout.passage_spans, vec![(12, 20), (21, 29)]);
        assert_eq!(s.layout.question_span, (32, 37));
        assert_eq!(s.layout.question_last_token_index, 36);
        assert_eq!(s.layout.answer_span, (39, 40));
        assert_eq!(s.layout.prompt_last_token_index, 38);
        let q_last = s.layout.tokens[s.layout.question_last_token_index];
        assert_eq!(c.vocab().word(q_last).unwrap(), "?");
        let cue = s.layout.tokens[s.layout.prompt_last_token_index];
        assert_eq!(c.vocab().word(cue).unwrap(), ":");
    }

    #[test]
    fn render_length_limit_is_enforced() {
        let c = Corpus::new(CorpusConfig {
            max_prompt_len: 40,
            ..CorpusConfig::default()
        })
        .unwrap();
        assert_eq!(c.generate_sample(0).unwrap_err().class(), "length");
    }

    #[test]
    fn shuffle_preserves_content_and_moves_indices() {
        let c = default_corpus();
        let s = c.generate_sample(11).unwrap();
        let shuffled = c.shuffle_passages(&s, 99).unwrap();
        assert_eq!(shuffled.passages.len(), s.passages.len());
        let mut a: Vec<&Vec<u32>> = s.passages.iter().map(|p| &p.tokens).collect();
        let mut b: Vec<&Vec<u32>> = shuffled.passages.iter().map(|p| &p.tokens).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "passage multiset must be invariant");
        let g_old = *s.golden_indices.iter().next().unwrap();
        let g_new = *shuffled.golden_indices.iter().next().unwrap();
        assert_eq!(s.passages[g_old].tokens, shuffled.passages[g_new].tokens);
        assert_eq!(s.answer, shuffled.answer);
    }

    #[test]
    fn shuffle_permutations_are_uniform() {
        let c = Corpus::new(CorpusConfig {
            n_passages: 5,
            ..CorpusConfig::default()
        })
        .unwrap();
        let s = c.generate_sample(1).unwrap();
        let base: Vec<Vec<u32>> = s.passages.iter().map(|p| p.tokens.clone()).collect();
        let mut counts: std::collections::HashMap<Vec<usize>, usize> = Default::default();
        let n = 10_000;
        for seed in 0..n {
            let sh = c.shuffle_passages(&s, seed).unwrap();
            let perm: Vec<usize> = sh
                .passages
                .iter()
                .map(|p| base.iter().position(|b| *b == p.tokens).unwrap())
                .collect();
            *counts.entry(perm).or_default() += 1;
        }
        assert!(counts.len() == 120, "all 5! permutations should appear");
        let tv: f64 = counts
            .values()
            .map(|&k| (k as f64 / n as f64 - 1.0 / 120.0).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.05, "total variation {tv} above bound");
    }

    #[test]
    fn niah_sample_has_needle_as_golden() {
        let c = Corpus::new(CorpusConfig {
            task: TaskKind::Niah,
            ..CorpusConfig::default()
        })
        .unwrap();
        let s = c.generate_sample(5).unwrap();
        assert_eq!(s.golden_indices.len(), 1);
        assert!(s.answer_leakage_free());
        let g = *s.golden_indices.iter().next().unwrap();
        assert!(contains_subsequence(&s.passages[g].tokens, &s.answer));
        assert!(s.passages[g].entities.is_empty());
    }

    #[test]
    fn two_hop_sample_has_two_golden_passages() {
        let c = Corpus::new(CorpusConfig {
            n_golden: 2,
            task: TaskKind::TwoHop,
            ..CorpusConfig::default()
        })
        .unwrap();
        let s = c.generate_sample(9).unwrap();
        assert_eq!(s.golden_indices.len(), 2);
        assert!(s.answer_leakage_free());
        // Only the hide-fact passage carries the answer.
        let holders: Vec<usize> = s
            .passages
            .iter()
            .enumerate()
            .filter(|(_, p)| contains_subsequence(&p.tokens, &s.answer))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(holders.len(), 1);
        assert!(s.golden_indices.contains(&holders[0]));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(Corpus::new(CorpusConfig { n_golden: 11, ..CorpusConfig::default() }).is_err());
        assert!(Corpus::new(CorpusConfig { n_passages: 0, ..CorpusConfig::default() }).is_err());
        assert!(Corpus::new(CorpusConfig {
            n_passages: 30,
            ..CorpusConfig::default()
        })
        .is_err());
    }

    #[test]
    fn jsonl_round_trips() {
        let c = default_corpus();
        let samples = c.generate_many(4, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_jsonl(&samples, &path).unwrap();
        let loaded = load_jsonl(&path).unwrap();
        assert_eq!(samples, loaded);
    }
}
