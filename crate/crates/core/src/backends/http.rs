//! Blocking HTTP client for the generation and token-labeling endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    ErrorResponse, GenerateRequest, GenerateResponse, LabelTokensRequest, LabelTokensResponse, GENERATE_PATH,
    LABEL_TOKENS_PATH,
};
use super::{validate_token_labels, BackendEndpoint, BackendError, GenParams, Generator, TokenLabeler};
use crate::align::TokenSpanLabel;
use crate::corpus::InstanceId;

/// Bearer token sent with every request when set.
pub const AUTH_TOKEN_ENV: &str = "CHANGEPOINT_API_TOKEN";

const MAX_BACKOFF: Duration = Duration::from_secs(10);

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClientStats {
    pub requests: u64,
    pub retries: u64,
    pub failures: u64,
}

pub struct HttpBackend {
    endpoint: BackendEndpoint,
    client: Client,
    token: Option<String>,
    requests: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

enum Attempt<T> {
    Done(Result<T, BackendError>),
    Retry(String),
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, String> {
        endpoint.validate()?;
        let client = Client::builder()
            .timeout(endpoint.timeout())
            .build()
            .map_err(|e| format!("cannot build HTTP client: {e}"))?;
        Ok(HttpBackend {
            endpoint,
            client,
            token: std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        })
    }

    /// Overrides the token read from the environment; `None` sends no
    /// `Authorization` header.
    pub fn with_auth_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    fn attempt<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B) -> Attempt<T> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let bytes = match resp.bytes() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.is_success() {
            return Attempt::Done(
                serde_json::from_slice(&bytes).map_err(|e| BackendError::Malformed(format!("{e}"))),
            );
        }
        let message = serde_json::from_slice::<ErrorResponse>(&bytes)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Attempt::Retry(format!("{status}: {message}"))
        } else {
            Attempt::Done(Err(BackendError::Status {
                status: status.as_u16(),
                message,
            }))
        }
    }

    /// Posts `body`, retrying transport errors, 5xx and 429 with exponential
    /// backoff until the retry budget is spent.
    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, BackendError> {
        let url = self.url(path);
        let mut delay = Duration::from_millis(self.endpoint.backoff_ms);
        let attempts = self.endpoint.retry_budget + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                std::thread::sleep(delay);
                delay = (delay * 2).min(MAX_BACKOFF);
            }
            match self.attempt(&url, body) {
                Attempt::Done(result) => {
                    if result.is_err() {
                        self.failures.fetch_add(1, Ordering::Relaxed);
                    }
                    return result;
                }
                Attempt::Retry(msg) => {
                    log::debug!("{url}: attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        self.failures.fetch_add(1, Ordering::Relaxed);
        Err(BackendError::Exhausted { attempts, last })
    }
}

fn check_id(sent: &InstanceId, got: &InstanceId) -> Result<(), BackendError> {
    if sent == got {
        Ok(())
    } else {
        Err(BackendError::Malformed(format!("response id {got} does not match request id {sent}")))
    }
}

impl Generator for HttpBackend {
    fn generate(&self, id: &InstanceId, prompt: &str, params: &GenParams) -> Result<String, BackendError> {
        let body = GenerateRequest {
            id: id.clone(),
            prompt: prompt.to_owned(),
            temperature: params.temperature,
            top_p: params.top_p,
            max_new_tokens: params.max_new_tokens,
        };
        let resp: GenerateResponse = self.post(GENERATE_PATH, &body)?;
        check_id(id, &resp.id)?;
        Ok(resp.text)
    }
}

impl TokenLabeler for HttpBackend {
    fn label_tokens(&self, id: &InstanceId, text: &str) -> Result<Vec<TokenSpanLabel>, BackendError> {
        let body = LabelTokensRequest {
            id: id.clone(),
            text: text.to_owned(),
        };
        let resp: LabelTokensResponse = self.post(LABEL_TOKENS_PATH, &body)?;
        check_id(id, &resp.id)?;
        validate_token_labels(text, &resp.tokens)?;
        Ok(resp.tokens)
    }
}
