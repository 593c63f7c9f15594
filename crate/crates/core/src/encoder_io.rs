//! Encoder inputs and the conversion of token labels back to word boundaries.
//!
//! Encoder inputs may carry one `<BREAK>` word. Boundaries are always reported
//! in the coordinates of the original, marker-free text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::align::{token_labels_to_word_index, AlignError, LabelVector};
use crate::backends::{validate_token_labels, BackendError, TokenLabeler};
use crate::corpus::{tokenize_words, InstanceId, MixedTextInstance};
use crate::decoder_post::{insert_break, BreakError, BREAK_MARKER};
use crate::ensemble::BoundaryPrediction;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderExample {
    pub id: InstanceId,
    #[serde(rename = "text_with_break")]
    pub input_text: String,
    /// Gold boundary in original coordinates; absent at inference time.
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_boundary: Option<usize>,
    pub has_break: bool,
}

impl EncoderExample {
    /// Unmarked input: the text as-is.
    pub fn plain(instance: &MixedTextInstance) -> Self {
        EncoderExample {
            id: instance.id.clone(),
            input_text: instance.text.clone(),
            gold_boundary: instance.gold_boundary,
            has_break: false,
        }
    }

    /// Input with `<BREAK>` before word `boundary`.
    pub fn marked(instance: &MixedTextInstance, boundary: usize) -> Result<Self, EncoderError> {
        Ok(EncoderExample {
            id: instance.id.clone(),
            input_text: insert_break(&instance.text, boundary).map_err(|e| EncoderError::Break(instance.id.clone(), e))?,
            gold_boundary: instance.gold_boundary,
            has_break: true,
        })
    }
}

/// Which training rows to emit besides the decoder-marked ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainingMix {
    /// Add one row per source instance.
    pub mix_source: bool,
    /// Mark source rows at the gold boundary instead of leaving them plain.
    #[serde(default)]
    pub source_with_gold_break: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("prediction references unknown instance {0}")]
    UnknownId(InstanceId),
    #[error("instance {0} has no gold boundary")]
    MissingGold(InstanceId),
    #[error("instance {id}: predicted boundary {value} is not a word index in 0..={words}")]
    InvalidBoundary { id: InstanceId, value: f64, words: usize },
    #[error("instance {0}: {1}")]
    Break(InstanceId, BreakError),
    #[error("instance {0}: {1}")]
    Backend(InstanceId, BackendError),
    #[error("instance {0}: inconsistent token offsets: {1}")]
    Offsets(InstanceId, AlignError),
}

impl EncoderError {
    pub fn is_transport(&self) -> bool {
        matches!(self, EncoderError::Backend(_, e) if e.is_transport())
    }
}

/// Converts a real-valued decoder prediction to a word index of `instance`.
pub fn boundary_index(instance: &MixedTextInstance, value: f64) -> Result<usize, EncoderError> {
    let words = instance.word_count();
    if value.fract() != 0.0 || value < 0.0 || value > words as f64 {
        return Err(EncoderError::InvalidBoundary {
            id: instance.id.clone(),
            value,
            words,
        });
    }
    Ok(value as usize)
}

/// Builds encoder training rows: one marked row per decoder prediction, then
/// (with `mix_source`) one row per source instance, each group in input order.
pub fn make_training_examples(
    instances: &[MixedTextInstance],
    predictions: &[BoundaryPrediction],
    mix: TrainingMix,
) -> Result<Vec<EncoderExample>, EncoderError> {
    let by_id: HashMap<&InstanceId, &MixedTextInstance> = instances.iter().map(|i| (&i.id, i)).collect();
    let mut out = Vec::with_capacity(predictions.len() + if mix.mix_source { instances.len() } else { 0 });
    for p in predictions {
        let inst = by_id.get(&p.id).ok_or_else(|| EncoderError::UnknownId(p.id.clone()))?;
        if inst.gold_boundary.is_none() {
            return Err(EncoderError::MissingGold(inst.id.clone()));
        }
        out.push(EncoderExample::marked(inst, boundary_index(inst, p.value)?)?);
    }
    if mix.mix_source {
        for inst in instances {
            let gold = inst.gold_boundary.ok_or_else(|| EncoderError::MissingGold(inst.id.clone()))?;
            out.push(if mix.source_with_gold_break {
                EncoderExample::marked(inst, gold)?
            } else {
                EncoderExample::plain(inst)
            });
        }
    }
    Ok(out)
}

/// Asks `labeler` for token labels and returns the first machine word in
/// original coordinates.
pub fn predict_boundary(
    labeler: &dyn TokenLabeler,
    example: &EncoderExample,
    stage: &str,
) -> Result<BoundaryPrediction, EncoderError> {
    let id = &example.id;
    let text = &example.input_text;
    let tokens = labeler.label_tokens(id, text).map_err(|e| EncoderError::Backend(id.clone(), e))?;
    validate_token_labels(text, &tokens).map_err(|e| EncoderError::Backend(id.clone(), e))?;

    let words = tokenize_words(text);
    let marker = if example.has_break {
        words.iter().position(|w| w.as_str(text) == BREAK_MARKER)
    } else {
        None
    };
    let (spans, labels): (Vec<_>, LabelVector) = LabelVector::from_token_labels(&tokens, &words);
    let index = token_labels_to_word_index(&labels, &spans, &words, text).map_err(|e| EncoderError::Offsets(id.clone(), e))?;
    let original = match marker {
        Some(m) if index > m => index - 1,
        _ => index,
    };
    let mut pred = BoundaryPrediction::new(id.clone(), original as f64, stage);
    pred.diagnostics.truncated = labels.truncated;
    Ok(pred)
}
