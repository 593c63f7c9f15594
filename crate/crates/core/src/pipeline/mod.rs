//! End-to-end orchestration: configs, stage drivers and the CLI commands.
//!
//! Every stage writes its artifacts to disk before the next one starts, so a
//! run can be inspected, diffed, and resumed stage by stage.

mod commands;
pub mod config;
pub mod stages;

pub use commands::{
    cmd_ensemble, cmd_prepare, cmd_run, cmd_score, cmd_synth, read_failures, read_predictions, PrepareSummary,
    RunOptions, RunSummary, ScoreOptions,
};
pub use config::{PipelineConfig, TrainingData, DECODER_STAGE};
pub use stages::{run_decoder, run_encoder, StageFailure, StageOutput};

use crate::corpus::InstanceId;

/// Artifact names inside a work or output directory.
pub mod artifacts {
    pub const FOLDS: &str = "folds.json";
    pub const PLAN: &str = "plan.json";
    pub const PREPARE_FAILURES: &str = "prepare_failures.jsonl";
    pub const DECODER_PREDICTIONS: &str = "decoder_predictions.jsonl";
    pub const BREAK_TEXTS: &str = "break_texts.jsonl";
    pub const PREDICTIONS: &str = "predictions.jsonl";
    pub const FAILURES: &str = "failures.jsonl";

    pub fn fold_decoder_predictions(fold: usize) -> String {
        format!("fold{fold}_decoder_predictions.jsonl")
    }

    pub fn stage_predictions(stage: &str) -> String {
        format!("{stage}_predictions.jsonl")
    }

    pub fn stage_failures(stage: &str) -> String {
        format!("{stage}_failures.jsonl")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad or missing input files, bad configuration, bad arguments.
    #[error("{0}")]
    Input(String),
    /// Ids that do not line up between files, or boundaries that cannot be
    /// placed in their text.
    #[error("{message}")]
    Ids { message: String, ids: Vec<InstanceId> },
    #[error("backend unavailable: {0}")]
    BackendExhausted(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 2,
            PipelineError::Ids { .. } => 3,
            PipelineError::BackendExhausted(_) => 4,
            PipelineError::Io(_) => 1,
        }
    }
}
