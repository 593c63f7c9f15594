//! Deterministic in-process backends.
//!
//! Every mock is a pure function of the request, the gold labels it was built
//! with, and its seed.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, GenParams, Generator, TokenLabeler};
use crate::align::{word_index_to_token_labels, TokenSpan, TokenSpanLabel};
use crate::corpus::{tokenize_words, InstanceId, WordSpan};
use crate::decoder_post::{text_from_prompt, BREAK_MARKER};

pub(crate) fn default_max_tokens() -> usize {
    1024
}

/// FNV-1a, used to derive per-instance seeds that are stable across runs and
/// platforms.
fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn instance_rng(seed: u64, id: &InstanceId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(id.key().as_bytes()))
}

/// `gold` moved by a uniform offset in `[-max_offset, max_offset]`, clamped to
/// `[0, n]`.
pub fn noisy_boundary(gold: usize, n: usize, max_offset: usize, seed: u64, id: &InstanceId) -> usize {
    let d = max_offset as i64;
    let offset = instance_rng(seed, id).random_range(-d..=d);
    (gold as i64 + offset).clamp(0, n as i64) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mock", rename_all = "snake_case")]
pub enum GenerationMock {
    /// Answers with the exact gold suffix.
    Oracle,
    /// Answers with the suffix starting at a noisy boundary.
    NoisyOracle { max_offset: usize, seed: u64 },
    /// Always `Answer: None`.
    AlwaysNone,
    /// Answers with words unrelated to the text.
    Garbage { seed: u64 },
}

pub struct MockGenerator {
    kind: GenerationMock,
    golds: HashMap<InstanceId, usize>,
}

impl MockGenerator {
    pub fn new(kind: GenerationMock, golds: HashMap<InstanceId, usize>) -> Self {
        MockGenerator { kind, golds }
    }

    fn gold(&self, id: &InstanceId) -> Result<usize, BackendError> {
        self.golds.get(id).copied().ok_or_else(|| BackendError::UnknownInstance(id.clone()))
    }
}

const GARBAGE: &[&str] = &["lorem", "ipsum", "dolor", "sit", "amet", "consectetur", "adipiscing", "elit"];

fn answer_from(words: &[&str], boundary: usize) -> String {
    if boundary >= words.len() {
        "Answer: None".to_owned()
    } else {
        format!("Answer: {}", words[boundary..].join(" "))
    }
}

impl Generator for MockGenerator {
    fn generate(&self, id: &InstanceId, prompt: &str, _params: &GenParams) -> Result<String, BackendError> {
        let text = text_from_prompt(prompt).ok_or_else(|| BackendError::Malformed("unrecognized prompt".to_owned()))?;
        let words: Vec<&str> = text.split_whitespace().collect();
        match &self.kind {
            GenerationMock::Oracle => Ok(answer_from(&words, self.gold(id)?)),
            GenerationMock::NoisyOracle { max_offset, seed } => {
                let b = noisy_boundary(self.gold(id)?, words.len(), *max_offset, *seed, id);
                Ok(answer_from(&words, b))
            }
            GenerationMock::AlwaysNone => Ok("Answer: None".to_owned()),
            GenerationMock::Garbage { seed } => {
                let mut rng = instance_rng(*seed, id);
                let len = rng.random_range(1..=8);
                let out: Vec<&str> = (0..len).map(|_| *GARBAGE.choose(&mut rng).expect("non-empty")).collect();
                Ok(out.join(" "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mock", rename_all = "snake_case")]
pub enum LabelerMock {
    /// Labels from the gold boundary.
    Oracle,
    /// Labels from a gold boundary moved by a uniform word offset.
    NoisyOracle { max_offset: usize, seed: u64 },
    /// Every token human.
    ConstantZero,
}

/// Token labeler with a deterministic subword segmentation: words are cut into
/// pieces of one to four characters, and `<BREAK>` becomes `<`, `BREAK`, `>`.
pub struct MockLabeler {
    kind: LabelerMock,
    golds: HashMap<InstanceId, usize>,
    max_tokens: usize,
}

impl MockLabeler {
    pub fn new(kind: LabelerMock, golds: HashMap<InstanceId, usize>) -> Self {
        MockLabeler {
            kind,
            golds,
            max_tokens: default_max_tokens(),
        }
    }

    /// Caps the token window, like a model's maximum sequence length.
    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

/// Subword segmentation used by [`MockLabeler`].
pub fn mock_segmentation(text: &str, words: &[WordSpan]) -> Vec<TokenSpan> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(text.as_bytes()));
    let mut out = Vec::new();
    for w in words {
        if w.as_str(text) == BREAK_MARKER {
            out.push(TokenSpan { start: w.start, end: w.start + 1 });
            out.push(TokenSpan { start: w.start + 1, end: w.end - 1 });
            out.push(TokenSpan { start: w.end - 1, end: w.end });
            continue;
        }
        let mut s = w.start;
        while s < w.end {
            let e = (s + rng.random_range(1..=4)).min(w.end);
            out.push(TokenSpan { start: s, end: e });
            s = e;
        }
    }
    out
}

impl TokenLabeler for MockLabeler {
    fn label_tokens(&self, id: &InstanceId, text: &str) -> Result<Vec<TokenSpanLabel>, BackendError> {
        let words = tokenize_words(text);
        let marker = words.iter().position(|w| w.as_str(text) == BREAK_MARKER);
        let n = words.len() - usize::from(marker.is_some());

        let boundary = match &self.kind {
            LabelerMock::ConstantZero => n,
            LabelerMock::Oracle => self.golds.get(id).copied().ok_or_else(|| BackendError::UnknownInstance(id.clone()))?.min(n),
            LabelerMock::NoisyOracle { max_offset, seed } => {
                let gold = self.golds.get(id).copied().ok_or_else(|| BackendError::UnknownInstance(id.clone()))?;
                noisy_boundary(gold.min(n), n, *max_offset, *seed, id)
            }
        };
        // Move into the coordinates of the text we were sent.
        let marked_boundary = match marker {
            Some(m) if m <= boundary => boundary + 1,
            _ => boundary,
        };

        let mut spans = mock_segmentation(text, &words);
        spans.truncate(self.max_tokens);
        let labels = word_index_to_token_labels(&words, marked_boundary, &spans)
            .map_err(|e| BackendError::InvalidSpans(e.to_string()))?;
        Ok(spans
            .iter()
            .zip(labels.labels)
            .map(|(s, label)| TokenSpanLabel { start: s.start, end: s.end, label })
            .collect())
    }
}
