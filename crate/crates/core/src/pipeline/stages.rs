//! Per-stage drivers. Each stage fans requests out to its backend and keeps
//! successes and per-instance failures apart, both in input order.

use serde::{Deserialize, Serialize};

use crate::backends::{fan_out, BackendError, GenParams, Generator, TokenLabeler};
use crate::corpus::{InstanceId, MixedTextInstance};
use crate::decoder_post::{boundary_from_answer, build_prompt};
use crate::encoder_io::{predict_boundary, EncoderExample, EncoderError};
use crate::ensemble::{BoundaryPrediction, Diagnostics};

use super::config::DECODER_STAGE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub id: InstanceId,
    pub stage: String,
    pub error: String,
    /// The backend could not be reached within its retry budget.
    #[serde(default)]
    pub transport: bool,
}

/// A prediction, or an error message and whether it was a transport failure.
type InstanceResult = Result<BoundaryPrediction, (String, bool)>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageOutput {
    pub predictions: Vec<BoundaryPrediction>,
    pub failures: Vec<StageFailure>,
}

impl StageOutput {
    /// Every request failed at the transport level.
    pub fn transport_exhausted(&self) -> bool {
        self.predictions.is_empty() && !self.failures.is_empty() && self.failures.iter().all(|f| f.transport)
    }

    fn collect(stage: &str, results: Vec<(InstanceId, InstanceResult)>) -> Self {
        let mut out = StageOutput::default();
        for (id, r) in results {
            match r {
                Ok(p) => out.predictions.push(p),
                Err((error, transport)) => out.failures.push(StageFailure {
                    id,
                    stage: stage.to_owned(),
                    error,
                    transport,
                }),
            }
        }
        out
    }
}

/// Prompts the decoder for every instance and aligns its answers.
pub fn run_decoder(
    generator: &dyn Generator,
    instances: &[MixedTextInstance],
    params: &GenParams,
    max_in_flight: usize,
) -> StageOutput {
    let results = fan_out(instances, max_in_flight, |inst| {
        let r = generator
            .generate(&inst.id, &build_prompt(&inst.text), params)
            .map(|raw| {
                let (_, alignment) = boundary_from_answer(&inst.text, &raw);
                let mut p = BoundaryPrediction::new(inst.id.clone(), alignment.boundary as f64, DECODER_STAGE);
                p.diagnostics = Diagnostics::from(alignment);
                p
            })
            .map_err(|e: BackendError| (e.to_string(), e.is_transport()));
        (inst.id.clone(), r)
    });
    StageOutput::collect(DECODER_STAGE, results)
}

/// Runs one token-labeling encoder over prepared inputs.
pub fn run_encoder(labeler: &dyn TokenLabeler, examples: &[EncoderExample], stage: &str, max_in_flight: usize) -> StageOutput {
    let results = fan_out(examples, max_in_flight, |ex| {
        let r = predict_boundary(labeler, ex, stage).map_err(|e: EncoderError| (e.to_string(), e.is_transport()));
        (ex.id.clone(), r)
    });
    StageOutput::collect(stage, results)
}
