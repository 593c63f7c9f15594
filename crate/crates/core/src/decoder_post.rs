//! Decoder prompting and post-processing.
//!
//! The decoder is asked to reproduce only the machine-generated tail of a
//! text. Its answer is parsed, located inside the original words, and the
//! resulting boundary is marked with a standalone `<BREAK>` word for the
//! encoder stage.

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_words, word_texts};

/// Marker word placed directly before the first predicted machine word.
pub const BREAK_MARKER: &str = "<BREAK>";

const PROMPT_PREFIX: &str = "As an output, write only the machine-generated part of the provided text. \
Output must start with \"Answer: \". Separate tokens by \" \". \
If the whole text is human-written, output \"None\". Here is the text: ";

/// Minimum fuzzy window score accepted before falling back to the length
/// heuristic.
pub const FUZZY_THRESHOLD: f64 = 0.5;

/// The decoder instruction followed by `text`.
pub fn build_prompt(text: &str) -> String {
    let mut prompt = String::with_capacity(PROMPT_PREFIX.len() + text.len());
    prompt.push_str(PROMPT_PREFIX);
    prompt.push_str(text);
    prompt
}

/// Recovers the instance text from a prompt built by [`build_prompt`].
pub fn text_from_prompt(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(PROMPT_PREFIX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnswerKind {
    Suffix,
    None,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerPayload {
    pub kind: AnswerKind,
    pub suffix_words: Vec<String>,
    pub raw: String,
}

fn strip_answer_marker(raw: &str) -> Option<&str> {
    let s = raw.trim_start();
    let head = s.get(..6)?;
    if !head.eq_ignore_ascii_case("answer") {
        return None;
    }
    s[6..].trim_start().strip_prefix(':')
}

fn is_none_answer(s: &str) -> bool {
    s.strip_suffix('.').unwrap_or(s).eq_ignore_ascii_case("none")
}

/// Parses raw decoder output. Never fails: every input maps to one kind.
pub fn parse_answer(raw: &str) -> AnswerPayload {
    let payload = |kind, words: Vec<String>| AnswerPayload {
        kind,
        suffix_words: words,
        raw: raw.to_owned(),
    };
    let (body, had_marker) = match strip_answer_marker(raw) {
        Some(rest) => (rest.trim(), true),
        None => (raw.trim(), false),
    };
    if body.is_empty() {
        let kind = if had_marker { AnswerKind::None } else { AnswerKind::Unparseable };
        return payload(kind, Vec::new());
    }
    if is_none_answer(body) {
        return payload(AnswerKind::None, Vec::new());
    }
    payload(AnswerKind::Suffix, body.split_whitespace().map(str::to_owned).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlignMethod {
    Exact,
    Fuzzy,
    FallbackLength,
    NoneAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub boundary: usize,
    pub score: f64,
    pub method: AlignMethod,
}

/// Casefolded with leading/trailing punctuation removed. Words made only of
/// punctuation keep their casefolded form.
pub fn normalize_word(w: &str) -> String {
    let trimmed = w.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        w.to_lowercase()
    } else {
        trimmed.to_lowercase()
    }
}

/// Fraction of positions where the window starting at `start` agrees with
/// `suffix`, over the longer of the two lengths.
pub fn window_score(words: &[String], start: usize, suffix: &[String]) -> f64 {
    let n = words.len();
    let m = suffix.len();
    let overlap = m.min(n - start);
    let hits = (0..overlap).filter(|&j| words[start + j] == suffix[j]).count();
    hits as f64 / m.max(n - start) as f64
}

/// Locates the predicted machine suffix inside `words`.
///
/// Tries, in order: an empty/`None` answer, a verbatim suffix match, the best
/// fuzzy window (ties go to the earliest start), and finally `n - m`.
pub fn align_suffix(words: &[&str], suffix_words: &[String]) -> AlignmentResult {
    let n = words.len();
    let m = suffix_words.len();
    if m == 0 {
        return AlignmentResult {
            boundary: n,
            score: 1.0,
            method: AlignMethod::NoneAnswer,
        };
    }
    if m <= n && words[n - m..].iter().zip(suffix_words).all(|(a, b)| *a == b.as_str()) {
        return AlignmentResult {
            boundary: n - m,
            score: 1.0,
            method: AlignMethod::Exact,
        };
    }

    let norm_words: Vec<String> = words.iter().map(|w| normalize_word(w)).collect();
    let norm_suffix: Vec<String> = suffix_words.iter().map(|w| normalize_word(w)).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for start in 0..n {
        let score = window_score(&norm_words, start, &norm_suffix);
        if score > best.1 {
            best = (start, score);
        }
    }
    let (start, score) = best;
    if score >= FUZZY_THRESHOLD {
        AlignmentResult {
            boundary: start,
            score,
            method: AlignMethod::Fuzzy,
        }
    } else {
        AlignmentResult {
            boundary: n.saturating_sub(m),
            score: score.max(0.0),
            method: AlignMethod::FallbackLength,
        }
    }
}

/// Parses `raw` decoder output and aligns it against `text`.
///
/// An unparseable answer is treated like `None` but scored 0.
pub fn boundary_from_answer(text: &str, raw: &str) -> (AnswerPayload, AlignmentResult) {
    let answer = parse_answer(raw);
    let spans = tokenize_words(text);
    let words = word_texts(text, &spans);
    let mut result = align_suffix(&words, &answer.suffix_words);
    if answer.kind == AnswerKind::Unparseable {
        result.score = 0.0;
    }
    (answer, result)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BreakError {
    #[error("boundary {boundary} outside 0..={words}")]
    OutOfRange { boundary: usize, words: usize },
    #[error("text already contains a {BREAK_MARKER} word")]
    AlreadyMarked,
    #[error("expected exactly one {BREAK_MARKER} word, found {0}")]
    MarkerCount(usize),
}

/// Inserts `<BREAK>` as its own word directly before `words[boundary]`, or at
/// the end when `boundary` equals the word count.
pub fn insert_break(text: &str, boundary: usize) -> Result<String, BreakError> {
    let spans = tokenize_words(text);
    if spans.iter().any(|w| w.as_str(text) == BREAK_MARKER) {
        return Err(BreakError::AlreadyMarked);
    }
    if boundary > spans.len() {
        return Err(BreakError::OutOfRange {
            boundary,
            words: spans.len(),
        });
    }
    let mut out = String::with_capacity(text.len() + BREAK_MARKER.len() + 1);
    match spans.get(boundary) {
        Some(word) => {
            out.push_str(&text[..word.byte_start]);
            out.push_str(BREAK_MARKER);
            out.push(' ');
            out.push_str(&text[word.byte_start..]);
        }
        None => match spans.last() {
            Some(last) => {
                out.push_str(&text[..last.byte_end]);
                out.push(' ');
                out.push_str(BREAK_MARKER);
                out.push_str(&text[last.byte_end..]);
            }
            None => {
                out.push_str(text);
                out.push_str(BREAK_MARKER);
            }
        },
    }
    Ok(out)
}

/// Removes the single `<BREAK>` word and returns the whitespace-normalized
/// text together with the index of the word the marker preceded.
pub fn strip_break(marked: &str) -> Result<(String, usize), BreakError> {
    let words: Vec<&str> = marked.split_whitespace().collect();
    let positions: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| **w == BREAK_MARKER)
        .map(|(i, _)| i)
        .collect();
    let [boundary] = positions[..] else {
        return Err(BreakError::MarkerCount(positions.len()));
    };
    let text = words
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != boundary)
        .map(|(_, w)| *w)
        .collect::<Vec<_>>()
        .join(" ");
    Ok((text, boundary))
}
