//! JSON bodies of the generation and token-labeling endpoints.
//!
//! `POST /v1/generate` takes [`GenerateRequest`] and answers [`GenerateResponse`];
//! `POST /v1/label_tokens` takes [`LabelTokensRequest`] and answers
//! [`LabelTokensResponse`]. Non-2xx responses carry an [`ErrorResponse`].
//! Token offsets count Unicode scalar values of the request text.

use serde::{Deserialize, Serialize};

use crate::align::TokenSpanLabel;
use crate::corpus::InstanceId;

pub const GENERATE_PATH: &str = "/v1/generate";
pub const LABEL_TOKENS_PATH: &str = "/v1/label_tokens";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub id: InstanceId,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub id: InstanceId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTokensRequest {
    pub id: InstanceId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTokensResponse {
    pub id: InstanceId,
    pub tokens: Vec<TokenSpanLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
