use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{GenParams, GeneratorSpec, LabelerSpec};
use crate::ensemble::Rounding;
use crate::folds::DEFAULT_FOLD_SEED;

use super::PipelineError;

/// Name under which the decoder stage appears in ensembles and artifacts.
pub const DECODER_STAGE: &str = "decoder";

/// A complete pipeline setup: which models run, in what order, and how their
/// outputs are combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub decoder: Option<DecoderStage>,
    #[serde(default)]
    pub encoders: Vec<EncoderStage>,
    /// Feed encoders the text with `<BREAK>` at the decoder's boundary.
    #[serde(default)]
    pub use_break_at_inference: bool,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderStage {
    pub backend: GeneratorSpec,
    #[serde(default)]
    pub gen: GenParams,
    /// Per-fold decoders for cross-labeling, indexed by the fold they label.
    /// Empty means `backend` labels every fold.
    #[serde(default)]
    pub fold_backends: Vec<GeneratorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingData {
    TrainingSet,
    DecoderPredictions,
    TrainingSetPlusDecoderPredictions,
}

impl TrainingData {
    /// File written by `prepare` for this kind of training data.
    pub fn file_name(self) -> &'static str {
        match self {
            TrainingData::TrainingSet => "encoder_train_training_set.jsonl",
            TrainingData::DecoderPredictions => "encoder_train_decoder_predictions.jsonl",
            TrainingData::TrainingSetPlusDecoderPredictions => "encoder_train_mixed.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderStage {
    pub name: String,
    pub backend: LabelerSpec,
    pub training_data: TrainingData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub folds: usize,
    pub fold_seed: u64,
    pub source_with_gold_break: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            folds: 2,
            fold_seed: DEFAULT_FOLD_SEED,
            source_with_gold_break: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Stage names to average. Empty means every encoder, or the decoder
    /// when there are no encoders.
    pub members: Vec<String>,
    pub rounding: Rounding,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    /// Reads a TOML config, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&raw).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Input(format!("config {}: {m}", self.name)));
        if self.decoder.is_none() && self.encoders.is_empty() {
            return bad("no prediction stage configured".into());
        }
        if self.use_break_at_inference && self.decoder.is_none() {
            return bad("use_break_at_inference requires a decoder stage".into());
        }
        let mut names = HashSet::new();
        for e in &self.encoders {
            if e.name.is_empty() || e.name == DECODER_STAGE || e.name.contains(['/', '\\']) {
                return bad(format!("invalid encoder name {:?}", e.name));
            }
            if !names.insert(e.name.as_str()) {
                return bad(format!("duplicate encoder name {:?}", e.name));
            }
            if e.training_data != TrainingData::TrainingSet && self.decoder.is_none() {
                return bad(format!("encoder {} trains on decoder predictions but no decoder is configured", e.name));
            }
            if let LabelerSpec::Http(ep) = &e.backend {
                ep.validate().or_else(|m| bad(format!("encoder {}: {m}", e.name)))?;
            }
        }
        if let Some(d) = &self.decoder {
            d.gen.validate().or_else(|m| bad(format!("decoder: {m}")))?;
            for spec in std::iter::once(&d.backend).chain(&d.fold_backends) {
                if let GeneratorSpec::Http(ep) = spec {
                    ep.validate().or_else(|m| bad(format!("decoder: {m}")))?;
                }
            }
            if !d.fold_backends.is_empty() && d.fold_backends.len() != self.training.folds {
                return bad(format!(
                    "{} fold backends for {} folds",
                    d.fold_backends.len(),
                    self.training.folds
                ));
            }
        }
        if self.training.folds < 2 {
            return bad("training.folds must be at least 2".into());
        }
        for m in &self.ensemble.members {
            let known = names.contains(m.as_str()) || (m == DECODER_STAGE && self.decoder.is_some());
            if !known {
                return bad(format!("ensemble member {m:?} is not a configured stage"));
            }
        }
        Ok(())
    }

    /// Stage names averaged into the final prediction.
    pub fn ensemble_members(&self) -> Vec<String> {
        if !self.ensemble.members.is_empty() {
            self.ensemble.members.clone()
        } else if !self.encoders.is_empty() {
            self.encoders.iter().map(|e| e.name.clone()).collect()
        } else {
            vec![DECODER_STAGE.to_owned()]
        }
    }
}
