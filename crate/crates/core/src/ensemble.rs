//! Boundary predictions and their aggregation across models.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::InstanceId;
use crate::decoder_post::{AlignMethod, AlignmentResult};

/// Per-prediction diagnostics carried through intermediate files.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<AlignMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl From<AlignmentResult> for Diagnostics {
    fn from(r: AlignmentResult) -> Self {
        Diagnostics {
            method: Some(r.method),
            score: Some(r.score),
            truncated: false,
        }
    }
}

/// A predicted boundary for one instance, in original word coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPrediction {
    pub id: InstanceId,
    #[serde(rename = "label", serialize_with = "ser_value", deserialize_with = "de_value")]
    pub value: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stage: String,
    #[serde(flatten)]
    pub diagnostics: Diagnostics,
}

impl BoundaryPrediction {
    pub fn new(id: InstanceId, value: f64, stage: impl Into<String>) -> Self {
        BoundaryPrediction {
            id,
            value,
            stage: stage.into(),
            diagnostics: Diagnostics::default(),
        }
    }

    /// The `{"id", "label"}` form used for final prediction files.
    pub fn submission(&self) -> BoundaryPrediction {
        BoundaryPrediction::new(self.id.clone(), self.value, "")
    }
}

fn ser_value<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

fn de_value<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!("label {v} must be a finite non-negative number")))
    }
}

/// How the mean of member predictions becomes a word index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    Floor,
    HalfEven,
}

impl Rounding {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => x.round(),
            Rounding::Floor => x.floor(),
            Rounding::HalfEven => x.round_ties_even(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("no member predictions for instance {0}")]
    EmptyGroup(InstanceId),
    #[error("no word count for instance {0}")]
    MissingWordCount(InstanceId),
}

pub const ENSEMBLE_STAGE: &str = "ensemble";

/// Averages each group, rounds, and clamps to `[0, word_count]`. Output
/// follows the group order.
pub fn aggregate(
    groups: &IndexMap<InstanceId, Vec<BoundaryPrediction>>,
    word_counts: &HashMap<InstanceId, usize>,
    rounding: Rounding,
) -> Result<Vec<BoundaryPrediction>, EnsembleError> {
    groups
        .iter()
        .map(|(id, members)| {
            if members.is_empty() {
                return Err(EnsembleError::EmptyGroup(id.clone()));
            }
            let n = *word_counts.get(id).ok_or_else(|| EnsembleError::MissingWordCount(id.clone()))?;
            let mean = members.iter().map(|p| p.value).sum::<f64>() / members.len() as f64;
            let value = rounding.apply(mean).clamp(0.0, n as f64);
            let mut out = BoundaryPrediction::new(id.clone(), value, ENSEMBLE_STAGE);
            out.diagnostics.truncated = members.iter().any(|p| p.diagnostics.truncated);
            Ok(out)
        })
        .collect()
}
