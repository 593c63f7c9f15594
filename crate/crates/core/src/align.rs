//! Mapping between word-level boundaries and subword token labels.
//!
//! Tokens arrive from a labeling backend as character spans over the text the
//! backend saw. A token is attributed to the word containing its start offset.

use serde::{Deserialize, Serialize};

use crate::corpus::WordSpan;
use crate::decoder_post::BREAK_MARKER;

/// Character span of one subword token, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// A token span with its binary label: 0 = human, 1 = machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpanLabel {
    pub start: usize,
    pub end: usize,
    pub label: u8,
}

impl TokenSpanLabel {
    pub fn span(&self) -> TokenSpan {
        TokenSpan {
            start: self.start,
            end: self.end,
        }
    }
}

/// Labels aligned one-to-one with a token span list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVector {
    pub labels: Vec<u8>,
    /// The token window stopped before the last word ended.
    pub truncated: bool,
}

impl LabelVector {
    /// Splits backend output into spans and a label vector.
    pub fn from_token_labels(tokens: &[TokenSpanLabel], words: &[WordSpan]) -> (Vec<TokenSpan>, LabelVector) {
        let spans: Vec<TokenSpan> = tokens.iter().map(TokenSpanLabel::span).collect();
        let truncated = is_truncated(&spans, words);
        let labels = tokens.iter().map(|t| t.label).collect();
        (spans, LabelVector { labels, truncated })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("token {index} span {start}..{end} is empty or overlaps/precedes the previous token")]
    BadTokenOrder { index: usize, start: usize, end: usize },
    #[error("boundary {boundary} outside 0..={words}")]
    BoundaryOutOfRange { boundary: usize, words: usize },
    #[error("label vector has {labels} entries for {tokens} tokens")]
    LengthMismatch { labels: usize, tokens: usize },
    #[error("first machine token starts at offset {offset}, which is not inside any word")]
    OffsetOutsideWords { offset: usize },
}

/// Checks that spans are non-empty, ordered and non-overlapping.
pub fn validate_token_spans(tokens: &[TokenSpan]) -> Result<(), AlignError> {
    let mut prev_end = 0;
    for (index, t) in tokens.iter().enumerate() {
        if t.start >= t.end || t.start < prev_end {
            return Err(AlignError::BadTokenOrder {
                index,
                start: t.start,
                end: t.end,
            });
        }
        prev_end = t.end;
    }
    Ok(())
}

fn is_truncated(tokens: &[TokenSpan], words: &[WordSpan]) -> bool {
    match (tokens.last(), words.last()) {
        (_, None) => false,
        (None, Some(_)) => true,
        (Some(t), Some(w)) => t.end < w.end,
    }
}

/// Labels each token 1 iff it starts at or after the first character of
/// `words[boundary]`. `boundary == words.len()` labels everything 0.
pub fn word_index_to_token_labels(
    words: &[WordSpan],
    boundary: usize,
    tokens: &[TokenSpan],
) -> Result<LabelVector, AlignError> {
    if boundary > words.len() {
        return Err(AlignError::BoundaryOutOfRange {
            boundary,
            words: words.len(),
        });
    }
    validate_token_spans(tokens)?;
    let cut = words.get(boundary).map_or(usize::MAX, |w| w.start);
    Ok(LabelVector {
        labels: tokens.iter().map(|t| u8::from(t.start >= cut)).collect(),
        truncated: is_truncated(tokens, words),
    })
}

/// Index of the word containing `offset`. Offsets in whitespace resolve to the
/// following word, offsets past the last word to `words.len()`.
pub fn word_of_offset(words: &[WordSpan], offset: usize) -> usize {
    words.partition_point(|w| w.end <= offset)
}

/// Returns the word containing the start of the first token labeled 1, or
/// `words.len()` when no token is labeled 1.
///
/// Tokens lying inside a `<BREAK>` marker word are skipped, so the result is
/// expressed in the coordinates of `words` (which still contain the marker).
pub fn token_labels_to_word_index(
    labels: &LabelVector,
    tokens: &[TokenSpan],
    words: &[WordSpan],
    text: &str,
) -> Result<usize, AlignError> {
    if labels.labels.len() != tokens.len() {
        return Err(AlignError::LengthMismatch {
            labels: labels.labels.len(),
            tokens: tokens.len(),
        });
    }
    validate_token_spans(tokens)?;
    let markers: Vec<&WordSpan> = words.iter().filter(|w| w.as_str(text) == BREAK_MARKER).collect();
    let inside_marker = |t: &TokenSpan| markers.iter().any(|m| m.start <= t.start && t.end <= m.end);

    let first = tokens
        .iter()
        .zip(&labels.labels)
        .find(|(t, &l)| l == 1 && !inside_marker(t));
    let Some((token, _)) = first else {
        return Ok(words.len());
    };
    let index = word_of_offset(words, token.start);
    match words.get(index) {
        Some(w) if w.contains(token.start) => Ok(index),
        _ => Err(AlignError::OffsetOutsideWords { offset: token.start }),
    }
}
