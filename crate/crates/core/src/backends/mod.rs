//! Generation and token-labeling backends.
//!
//! Model inference sits behind two small traits. [`http::HttpBackend`] speaks
//! the JSON protocol in [`wire`]; [`mock`] provides deterministic in-process
//! implementations that answer from gold labels.

pub mod http;
pub mod mock;
pub mod wire;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::align::{validate_token_spans, TokenSpanLabel};
use crate::corpus::InstanceId;

pub use http::HttpBackend;
pub use mock::{GenerationMock, LabelerMock, MockGenerator, MockLabeler};

/// Sampling parameters forwarded to a generation service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 1.0,
            top_p: 1.0,
            max_new_tokens: 1024,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.top_p) || self.top_p == 0.0 {
            return Err(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".to_owned());
        }
        Ok(())
    }
}

fn default_timeout_ms() -> u64 {
    120_000
}
fn default_max_in_flight() -> usize {
    8
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

/// Where a remote backend lives and how hard to push it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retry_budget: u32,
    /// First retry delay; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        BackendEndpoint {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            retry_budget: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".to_owned());
        }
        if self.base_url.is_empty() {
            return Err("base_url is empty".to_owned());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("service returned {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid token spans: {0}")]
    InvalidSpans(String),
    #[error("backend has no record of instance {0}")]
    UnknownInstance(InstanceId),
}

impl BackendError {
    /// True for failures caused by the transport rather than the payload.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Exhausted { .. })
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, id: &InstanceId, prompt: &str, params: &GenParams) -> Result<String, BackendError>;
}

pub trait TokenLabeler: Send + Sync {
    fn label_tokens(&self, id: &InstanceId, text: &str) -> Result<Vec<TokenSpanLabel>, BackendError>;
}

/// Checks labeled spans against the text they describe.
pub fn validate_token_labels(text: &str, tokens: &[TokenSpanLabel]) -> Result<(), BackendError> {
    let spans: Vec<_> = tokens.iter().map(TokenSpanLabel::span).collect();
    validate_token_spans(&spans).map_err(|e| BackendError::InvalidSpans(e.to_string()))?;
    let len = text.chars().count();
    if let Some(last) = spans.last() {
        if last.end > len {
            return Err(BackendError::InvalidSpans(format!(
                "span {}..{} exceeds text length {len}",
                last.start, last.end
            )));
        }
    }
    if let Some(t) = tokens.iter().find(|t| t.label > 1) {
        return Err(BackendError::InvalidSpans(format!("label {} is not 0 or 1", t.label)));
    }
    Ok(())
}

/// Declarative choice of backend, as written in pipeline configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Http(BackendEndpoint),
    Mock(GenerationMock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelerSpec {
    Http(BackendEndpoint),
    Mock {
        #[serde(flatten)]
        mock: LabelerMock,
        #[serde(default = "mock::default_max_tokens")]
        max_tokens: usize,
    },
}

/// Builds a generator. Mocks answer from `golds` (original-text word indices).
pub fn build_generator(spec: &GeneratorSpec, golds: &HashMap<InstanceId, usize>) -> Result<Box<dyn Generator>, String> {
    Ok(match spec {
        GeneratorSpec::Http(ep) => Box::new(HttpBackend::new(ep.clone())?),
        GeneratorSpec::Mock(m) => Box::new(MockGenerator::new(m.clone(), golds.clone())),
    })
}

pub fn build_labeler(spec: &LabelerSpec, golds: &HashMap<InstanceId, usize>) -> Result<Box<dyn TokenLabeler>, String> {
    Ok(match spec {
        LabelerSpec::Http(ep) => Box::new(HttpBackend::new(ep.clone())?),
        LabelerSpec::Mock { mock, max_tokens } => {
            Box::new(MockLabeler::new(mock.clone(), golds.clone()).with_max_tokens(*max_tokens))
        }
    })
}

impl GeneratorSpec {
    pub fn max_in_flight(&self) -> usize {
        match self {
            GeneratorSpec::Http(ep) => ep.max_in_flight,
            GeneratorSpec::Mock(_) => 1,
        }
    }
}

impl LabelerSpec {
    pub fn max_in_flight(&self) -> usize {
        match self {
            LabelerSpec::Http(ep) => ep.max_in_flight,
            LabelerSpec::Mock { .. } => 1,
        }
    }
}

/// Runs `f` over `items` with at most `max_in_flight` calls in progress.
/// Results come back in input order whatever order the calls finish in.
pub fn fan_out<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
