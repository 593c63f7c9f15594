//! Shared helpers for integration tests: a scriptable HTTP server speaking the
//! backend wire protocol, and small corpus utilities.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::Router;
use serde_json::{json, Value};

use changepoint::backends::wire::{GenerateRequest, GenerateResponse, LabelTokensRequest, LabelTokensResponse};
use changepoint::backends::{Generator, MockGenerator, MockLabeler, TokenLabeler};
use changepoint::corpus::{InstanceId, MixedTextInstance};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

type Handler = dyn Fn(&Recorded) -> (u16, String) + Send + Sync;

pub struct TestServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
    in_flight: Arc<AtomicUsize>,
    peak_in_flight: Arc<AtomicUsize>,
}

impl TestServer {
    /// Serves every POST with `handler`, which returns a status and a raw
    /// body. The handler runs on a blocking thread, so it may sleep.
    pub fn start(handler: impl Fn(&Recorded) -> (u16, String) + Send + Sync + 'static) -> Self {
        let handler: Arc<Handler> = Arc::new(handler);
        let requests = Arc::new(Mutex::new(Vec::new()));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak_in_flight = Arc::new(AtomicUsize::new(0));

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());

        let (reqs, inf, peak) = (requests.clone(), in_flight.clone(), peak_in_flight.clone());
        let app = Router::new().fallback(move |uri: Uri, headers: HeaderMap, body: Bytes| {
            let (handler, reqs, inf, peak) = (handler.clone(), reqs.clone(), inf.clone(), peak.clone());
            async move {
                let rec = Recorded {
                    path: uri.path().to_owned(),
                    authorization: headers
                        .get(header::AUTHORIZATION)
                        .and_then(|v| v.to_str().ok())
                        .map(str::to_owned),
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                };
                reqs.lock().unwrap().push(rec.clone());
                let now = inf.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let (status, body) = tokio::task::spawn_blocking(move || handler(&rec)).await.unwrap();
                inf.fetch_sub(1, Ordering::SeqCst);
                (
                    StatusCode::from_u16(status).unwrap(),
                    [(header::CONTENT_TYPE, "application/json")],
                    body,
                )
            }
        });
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        TestServer {
            url,
            requests,
            in_flight,
            peak_in_flight,
        }
    }

    /// Answers both endpoints from in-process mocks, the way a real model
    /// service would over the wire.
    pub fn from_mocks(generator: MockGenerator, labeler: MockLabeler) -> Self {
        TestServer::start(move |req| match req.path.as_str() {
            "/v1/generate" => match serde_json::from_value::<GenerateRequest>(req.body.clone()) {
                Ok(r) => {
                    let params = changepoint::backends::GenParams {
                        temperature: r.temperature,
                        top_p: r.top_p,
                        max_new_tokens: r.max_new_tokens,
                    };
                    match generator.generate(&r.id, &r.prompt, &params) {
                        Ok(text) => ok(&GenerateResponse { id: r.id, text }),
                        Err(e) => error(404, &e.to_string()),
                    }
                }
                Err(e) => error(400, &e.to_string()),
            },
            "/v1/label_tokens" => match serde_json::from_value::<LabelTokensRequest>(req.body.clone()) {
                Ok(r) => match labeler.label_tokens(&r.id, &r.text) {
                    Ok(tokens) => ok(&LabelTokensResponse { id: r.id, tokens }),
                    Err(e) => error(404, &e.to_string()),
                },
                Err(e) => error(400, &e.to_string()),
            },
            other => error(404, &format!("no route {other}")),
        })
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

pub fn ok<T: serde::Serialize>(body: &T) -> (u16, String) {
    (200, serde_json::to_string(body).unwrap())
}

pub fn error(status: u16, message: &str) -> (u16, String) {
    (status, json!({ "error": message }).to_string())
}

pub fn golds(corpus: &[MixedTextInstance]) -> HashMap<InstanceId, usize> {
    corpus.iter().map(|i| (i.id.clone(), i.gold_boundary.unwrap())).collect()
}

/// A TCP address nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

pub fn workspace_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().parent().unwrap()
}
