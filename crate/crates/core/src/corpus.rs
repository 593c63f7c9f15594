//! Corpus records, JSONL I/O, word tokenization and synthetic corpora.
//!
//! A *word* is a maximal run of non-whitespace characters, where whitespace is
//! any Unicode `White_Space` code point. All boundary indices in this crate are
//! positions in that word sequence. Character offsets count Unicode scalar
//! values, not bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifier of a corpus record. Ids are opaque: the shared-task files use
/// integers, but any JSON string is accepted as well.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceId {
    Int(i64),
    Text(String),
}

impl InstanceId {
    /// Canonical string form, used as a JSON object key.
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceId::Int(v) => write!(f, "{v}"),
            InstanceId::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for InstanceId {
    fn from(v: i64) -> Self {
        InstanceId::Int(v)
    }
}

impl From<&str> for InstanceId {
    fn from(v: &str) -> Self {
        InstanceId::Text(v.to_owned())
    }
}

/// One corpus record.
///
/// `gold_boundary` is the index of the first machine-generated word. A value
/// equal to the word count means the whole text is human-written; zero means
/// the whole text is machine-generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MixedTextInstance {
    pub id: InstanceId,
    pub text: String,
    #[serde(rename = "label", skip_serializing_if = "Option::is_none")]
    pub gold_boundary: Option<usize>,
}

impl MixedTextInstance {
    pub fn new(id: impl Into<InstanceId>, text: impl Into<String>, gold: Option<usize>) -> Self {
        MixedTextInstance {
            id: id.into(),
            text: text.into(),
            gold_boundary: gold,
        }
    }

    pub fn words(&self) -> Vec<WordSpan> {
        tokenize_words(&self.text)
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.text)
    }

    /// Checks the record invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.text.trim_end().is_empty() {
            return Err("empty text".to_owned());
        }
        if let Some(gold) = self.gold_boundary {
            let n = self.word_count();
            if gold > n {
                return Err(format!("label {gold} > word count {n}"));
            }
        }
        Ok(())
    }
}

/// A whitespace-delimited word.
///
/// `start`/`end` are character offsets (end exclusive); the byte range is kept
/// alongside for slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordSpan {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

impl WordSpan {
    pub fn as_str<'a>(&self, text: &'a str) -> &'a str {
        &text[self.byte_start..self.byte_end]
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }
}

/// Splits `text` into words at Unicode whitespace.
pub fn tokenize_words(text: &str) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut chars = 0;
    for (byte, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some((start, byte_start)) = current.take() {
                spans.push(WordSpan {
                    index: spans.len(),
                    start,
                    end: chars,
                    byte_start,
                    byte_end: byte,
                });
            }
        } else if current.is_none() {
            current = Some((chars, byte));
        }
        chars += 1;
    }
    if let Some((start, byte_start)) = current {
        spans.push(WordSpan {
            index: spans.len(),
            start,
            end: chars,
            byte_start,
            byte_end: text.len(),
        });
    }
    spans
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// The words of `text` as string slices.
pub fn word_texts<'a>(text: &'a str, spans: &[WordSpan]) -> Vec<&'a str> {
    spans.iter().map(|s| s.as_str(text)).collect()
}

/// Words of `text` joined by single ASCII spaces.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineProblem {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<InstanceId>,
    pub message: String,
}

impl fmt::Display for LineProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id {}): {}", self.line, id, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} invalid line(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<LineProblem>),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<InstanceId>,
    text: String,
    #[serde(default)]
    label: Option<i64>,
}

/// Reads a JSONL corpus.
///
/// Every line is checked; all problems are returned together rather than
/// stopping at the first. Blank lines are ignored. A missing `id` is replaced
/// by the 1-based line number.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<MixedTextInstance>, CorpusError> {
    let mut instances = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(e) => {
                problems.push(LineProblem {
                    line: line_no,
                    id: None,
                    message: format!("malformed JSON: {e}"),
                });
                continue;
            }
        };
        let id = raw.id.unwrap_or(InstanceId::Int(line_no as i64));
        let gold = match raw.label {
            Some(l) if l < 0 => {
                problems.push(LineProblem {
                    line: line_no,
                    id: Some(id),
                    message: format!("label {l} is negative"),
                });
                continue;
            }
            Some(l) => Some(l as usize),
            None => None,
        };
        let inst = MixedTextInstance {
            id,
            text: raw.text,
            gold_boundary: gold,
        };
        match inst.validate() {
            Ok(()) => instances.push(inst),
            Err(message) => problems.push(LineProblem {
                line: line_no,
                id: Some(inst.id),
                message,
            }),
        }
    }
    if problems.is_empty() {
        Ok(instances)
    } else {
        Err(CorpusError::Invalid(problems))
    }
}

/// Reads a JSONL corpus from disk.
pub fn read_jsonl_file(path: &std::path::Path) -> Result<Vec<MixedTextInstance>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_jsonl(std::io::BufReader::new(file))
}

/// Writes one JSON object per item, in order.
pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> Result<(), CorpusError> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Summary counts over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub instance_count: usize,
    /// Keyed by the lower edge of each word-count bucket.
    pub word_count_histogram: BTreeMap<usize, usize>,
    /// Keyed by relative boundary decile (`"0.0-0.1"` .. `"0.9-1.0"`) or
    /// `"unlabeled"`.
    pub boundary_position_histogram: BTreeMap<String, usize>,
}

pub fn corpus_stats(instances: &[MixedTextInstance], word_bucket: usize) -> CorpusStats {
    let word_bucket = word_bucket.max(1);
    let mut words = BTreeMap::new();
    let mut positions = BTreeMap::new();
    for inst in instances {
        let n = inst.word_count();
        *words.entry(n / word_bucket * word_bucket).or_insert(0) += 1;
        let key = match inst.gold_boundary {
            Some(gold) if n > 0 => {
                let decile = ((gold as f64 / n as f64) * 10.0).floor().min(9.0) as usize;
                format!("0.{}-{}", decile, if decile == 9 { "1.0".to_owned() } else { format!("0.{}", decile + 1) })
            }
            _ => "unlabeled".to_owned(),
        };
        *positions.entry(key).or_insert(0) += 1;
    }
    CorpusStats {
        instance_count: instances.len(),
        word_count_histogram: words,
        boundary_position_histogram: positions,
    }
}

/// How many words a synthetic text has.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution {
            min_words: 20,
            max_words: 120,
        }
    }
}

/// Where the boundary falls in a synthetic text of `n` words.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryDistribution {
    /// Uniform over `0..=n`.
    #[default]
    Uniform,
    /// Always `min(index, n)`.
    Fixed { index: usize },
    /// `round(u * n)` with `u` uniform in `[lo, hi]`.
    RelativeRange { lo: f64, hi: f64 },
}

/// Word pools for the human prefix and the machine suffix. They must not
/// share a word, so the boundary of a synthetic text is recoverable from its
/// words alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub human: Vec<String>,
    pub machine: Vec<String>,
}

const HUMAN_WORDS: &[&str] = &[
    "we", "have", "added", "a", "page", "on", "it", "and", "the", "paper", "i", "think", "this",
    "is", "fine", "but", "not", "sure", "about", "table", "two", "my", "old", "dog", "went", "out",
    "yesterday", "rain", "kept", "us", "inside", "so", "cooked", "soup", "then", "slept", "late",
    "our", "team", "lost", "again", "coach", "was", "mad", "really",
];

const MACHINE_WORDS: &[&str] = &[
    "furthermore", "comprehensive", "leveraging", "insights", "highlighting", "superiority",
    "robust", "framework", "demonstrates", "significant", "impact", "overall", "notably",
    "crucial", "landscape", "paradigm", "enhancing", "facilitates", "seamless", "innovative",
    "additionally", "ultimately", "fostering", "pivotal", "realm", "delve", "multifaceted",
    "showcasing", "underscores", "transformative", "results,", "outcomes.", "approach;",
    "experimental", "discussion", "effectively", "holistic", "novel", "synergy", "valuable",
];

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            human: HUMAN_WORDS.iter().map(|s| s.to_string()).collect(),
            machine: MACHINE_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub count: usize,
    #[serde(default)]
    pub length: LengthDistribution,
    #[serde(default)]
    pub boundary: BoundaryDistribution,
    #[serde(default)]
    pub vocab: Vocabulary,
}

impl SynthParams {
    pub fn new(seed: u64, count: usize) -> Self {
        SynthParams {
            seed,
            count,
            length: LengthDistribution::default(),
            boundary: BoundaryDistribution::default(),
            vocab: Vocabulary::default(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid synthesis parameters: {0}")]
pub struct SynthError(pub String);

fn check_synth_params(params: &SynthParams) -> Result<(), SynthError> {
    let err = |m: &str| Err(SynthError(m.to_owned()));
    if params.count == 0 {
        return err("count must be positive");
    }
    let len = params.length;
    if len.min_words == 0 || len.min_words > len.max_words {
        return err("length range must satisfy 1 <= min_words <= max_words");
    }
    if let BoundaryDistribution::RelativeRange { lo, hi } = params.boundary {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return err("relative boundary range must satisfy 0 <= lo <= hi <= 1");
        }
    }
    let vocab = &params.vocab;
    if vocab.human.is_empty() || vocab.machine.is_empty() {
        return err("vocabularies must be non-empty");
    }
    if vocab
        .human
        .iter()
        .chain(&vocab.machine)
        .any(|w| w.is_empty() || w.chars().any(char::is_whitespace))
    {
        return err("vocabulary entries must be single non-empty words");
    }
    let human: HashSet<&String> = vocab.human.iter().collect();
    if vocab.machine.iter().any(|w| human.contains(w)) {
        return err("human and machine vocabularies overlap");
    }
    Ok(())
}

/// Generates a corpus with known boundaries. Ids are `0..count`.
pub fn synthesize_corpus(params: &SynthParams) -> Result<Vec<MixedTextInstance>, SynthError> {
    check_synth_params(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(params.count);
    for i in 0..params.count {
        let n = rng.random_range(params.length.min_words..=params.length.max_words);
        let gold = match params.boundary {
            BoundaryDistribution::Uniform => rng.random_range(0..=n),
            BoundaryDistribution::Fixed { index } => index.min(n),
            BoundaryDistribution::RelativeRange { lo, hi } => {
                let u = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                ((u * n as f64).round() as usize).min(n)
            }
        };
        let words: Vec<&str> = (0..n)
            .map(|j| {
                let pool = if j < gold { &params.vocab.human } else { &params.vocab.machine };
                pool.choose(&mut rng).expect("non-empty vocabulary").as_str()
            })
            .collect();
        out.push(MixedTextInstance {
            id: InstanceId::Int(i as i64),
            text: words.join(" "),
            gold_boundary: Some(gold),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Vec<MixedTextInstance>, CorpusError> {
        parse_jsonl(s.as_bytes())
    }

    /// Character-by-character reference splitter.
    fn reference_split(text: &str) -> Vec<(usize, usize, String)> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            out.push((start, i, chars[start..i].iter().collect()));
        }
        out
    }

    #[test]
    fn parses_full_record() {
        let v = parse(r#"{"id": 7, "text": "a b c", "label": 1}"#).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id, InstanceId::Int(7));
        assert_eq!(word_texts(&v[0].text, &v[0].words()), ["a", "b", "c"]);
        assert_eq!(v[0].gold_boundary, Some(1));
    }

    #[test]
    fn label_is_optional_and_id_defaults_to_line() {
        let v = parse("\n{\"text\": \"x\"}\n").unwrap();
        assert_eq!(v[0].gold_boundary, None);
        assert_eq!(v[0].id, InstanceId::Int(2));
    }

    #[test]
    fn label_past_word_count_is_rejected() {
        let err = parse(r#"{"text": "a b", "label": 5}"#).unwrap_err();
        match err {
            CorpusError::Invalid(problems) => {
                assert_eq!(problems[0].message, "label 5 > word count 2");
                assert_eq!(problems[0].id, Some(InstanceId::Int(1)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_bad_lines_are_reported() {
        let input = "{\"text\": \"ok\"}\nnot json\n{\"text\": \"a\", \"label\": -1}\n{\"text\": \"  \"}\n";
        let CorpusError::Invalid(problems) = parse(input).unwrap_err() else {
            panic!("expected validation failure");
        };
        let lines: Vec<usize> = problems.iter().map(|p| p.line).collect();
        assert_eq!(lines, [2, 3, 4]);
    }

    #[test]
    fn string_ids_survive() {
        let v = parse(r#"{"id": "doc-1", "text": "a"}"#).unwrap();
        assert_eq!(v[0].id, InstanceId::Text("doc-1".into()));
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &v).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"id\":\"doc-1\",\"text\":\"a\"}\n");
    }

    #[test]
    fn example_sentence_has_seven_words() {
        let text = "We have added a 2+ page discussion on the experimental results";
        let spans = tokenize_words(text);
        assert_eq!(spans.len(), 11);
        assert_eq!(spans[6].as_str(text), "discussion");
        let short = tokenize_words("We have added a 2+ page discussion");
        assert_eq!(short.len(), 7);
    }

    #[test]
    fn empty_and_mixed_whitespace() {
        assert!(tokenize_words("").is_empty());
        assert!(tokenize_words(" \t\n").is_empty());
        let spans = tokenize_words("  a\t b\n");
        assert_eq!(spans.len(), 2);
        assert_eq!((spans[0].start, spans[0].end), (2, 3));
        assert_eq!((spans[1].start, spans[1].end), (5, 6));
    }

    #[test]
    fn offsets_count_scalar_values() {
        let text = "é\u{3000}naïve x";
        let spans = tokenize_words(text);
        assert_eq!(word_texts(text, &spans), ["é", "naïve", "x"]);
        assert_eq!((spans[1].start, spans[1].end), (2, 7));
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams::new(1, 3);
        assert_eq!(synthesize_corpus(&p).unwrap(), synthesize_corpus(&p).unwrap());
    }

    #[test]
    fn synth_fixed_zero_is_fully_machine() {
        let mut p = SynthParams::new(5, 50);
        p.boundary = BoundaryDistribution::Fixed { index: 0 };
        let machine: HashSet<String> = p.vocab.machine.iter().cloned().collect();
        for inst in synthesize_corpus(&p).unwrap() {
            assert_eq!(inst.gold_boundary, Some(0));
            assert!(inst.text.split_whitespace().all(|w| machine.contains(w)));
        }
    }

    #[test]
    fn synth_rejects_degenerate_params() {
        let base = SynthParams::new(1, 10);
        let mut p = base.clone();
        p.count = 0;
        assert!(synthesize_corpus(&p).is_err());
        let mut p = base.clone();
        p.length = LengthDistribution { min_words: 5, max_words: 4 };
        assert!(synthesize_corpus(&p).is_err());
        let mut p = base.clone();
        p.length.min_words = 0;
        assert!(synthesize_corpus(&p).is_err());
        let mut p = base.clone();
        p.boundary = BoundaryDistribution::RelativeRange { lo: 0.8, hi: 0.2 };
        assert!(synthesize_corpus(&p).is_err());
        let mut p = base.clone();
        p.vocab.machine.push("dog".into());
        assert!(synthesize_corpus(&p).is_err());
        let mut p = base;
        p.vocab.human.clear();
        assert!(synthesize_corpus(&p).is_err());
    }

    #[test]
    fn synth_boundaries_follow_uniform_distribution() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut p = SynthParams::new(42, 500);
        p.length = LengthDistribution { min_words: 9, max_words: 9 };
        let mut counts = [0usize; 10];
        for inst in synthesize_corpus(&p).unwrap() {
            counts[inst.gold_boundary.unwrap()] += 1;
        }
        let expected = 50.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(9.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn synth_relative_range_stays_in_range() {
        let mut p = SynthParams::new(9, 200);
        p.boundary = BoundaryDistribution::RelativeRange { lo: 0.25, hi: 0.5 };
        for inst in synthesize_corpus(&p).unwrap() {
            let n = inst.word_count() as f64;
            let g = inst.gold_boundary.unwrap() as f64;
            assert!(g >= (0.25 * n).round() && g <= (0.5 * n).round());
        }
    }

    #[test]
    fn stats_totals_match() {
        let mut v = synthesize_corpus(&SynthParams::new(3, 40)).unwrap();
        v.push(MixedTextInstance::new(99, "unlabeled text", None));
        let stats = corpus_stats(&v, 25);
        assert_eq!(stats.instance_count, 41);
        assert_eq!(stats.word_count_histogram.values().sum::<usize>(), 41);
        assert_eq!(stats.boundary_position_histogram.values().sum::<usize>(), 41);
        assert_eq!(stats.boundary_position_histogram["unlabeled"], 1);
    }

    proptest! {
        #[test]
        fn tokenizer_matches_reference(text in "[a-zé \t\n\u{a0}\u{2003},.]{0,40}") {
            let spans = tokenize_words(&text);
            let reference = reference_split(&text);
            prop_assert_eq!(spans.len(), reference.len());
            for (s, (start, end, word)) in spans.iter().zip(&reference) {
                prop_assert_eq!((s.start, s.end), (*start, *end));
                prop_assert_eq!(s.as_str(&text), word.as_str());
            }
            let joined = word_texts(&text, &spans).join(" ");
            prop_assert_eq!(&joined, &normalize_whitespace(&text));
            let again = tokenize_words(&joined);
            prop_assert_eq!(word_texts(&joined, &again), word_texts(&text, &spans));
        }

        #[test]
        fn jsonl_round_trip(text in "\\PC{1,30}[a-z]", quote in "[\"\\\\\n\t]{0,3}", id in any::<i64>(), label in proptest::option::of(0usize..2)) {
            let text = format!("{quote}{text}{quote}");
            let gold = label.map(|l| l.min(word_count(&text)));
            let inst = MixedTextInstance::new(id, text, gold);
            let mut buf = Vec::new();
            write_jsonl(&mut buf, std::slice::from_ref(&inst)).unwrap();
            let back = parse_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![inst]);
        }
    }
}
