mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use changepoint::backends::wire::{GenerateResponse, LabelTokensResponse};
use changepoint::backends::{
    BackendEndpoint, BackendError, GenParams, GenerationMock, Generator, HttpBackend, LabelerMock, MockGenerator,
    MockLabeler, TokenLabeler,
};
use changepoint::corpus::{synthesize_corpus, InstanceId, SynthParams};
use changepoint::decoder_post::build_prompt;
use changepoint::metrics::score;
use changepoint::pipeline::{cmd_run, PipelineConfig, RunOptions};
use changepoint::align::TokenSpanLabel;

use common::{error, ok, TestServer};

fn endpoint(url: &str) -> BackendEndpoint {
    BackendEndpoint {
        retry_budget: 3,
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..BackendEndpoint::new(url)
    }
}

fn client(url: &str) -> HttpBackend {
    HttpBackend::new(endpoint(url)).unwrap().with_auth_token(None)
}

fn tok(start: usize, end: usize, label: u8) -> TokenSpanLabel {
    TokenSpanLabel { start, end, label }
}

#[test]
fn generate_sends_wire_request() {
    let server = TestServer::start(|req| ok(&json!({ "id": req.body["id"], "text": "Answer: None" })));
    let params = GenParams {
        temperature: 0.5,
        top_p: 0.9,
        max_new_tokens: 32,
    };
    let text = client(&server.url).generate(&InstanceId::from("a-1"), "prompt text", &params).unwrap();
    assert_eq!(text, "Answer: None");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].path, "/v1/generate");
    assert_eq!(
        reqs[0].body,
        json!({ "id": "a-1", "prompt": "prompt text", "temperature": 0.5, "top_p": 0.9, "max_new_tokens": 32 })
    );
    assert_eq!(reqs[0].authorization, None);
}

#[test]
fn bearer_token_is_passed_through() {
    let server = TestServer::start(|req| ok(&json!({ "id": req.body["id"], "tokens": [] })));
    let c = client(&server.url).with_auth_token(Some("s3cret".into()));
    c.label_tokens(&InstanceId::Int(1), "").unwrap();
    assert_eq!(server.requests()[0].authorization.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn retries_server_errors_and_rate_limits() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let server = TestServer::start(move |req| match seen.fetch_add(1, Ordering::SeqCst) {
        0 => error(503, "warming up"),
        1 => error(429, "slow down"),
        2 => (500, "not json at all".into()),
        _ => ok(&GenerateResponse {
            id: serde_json::from_value(req.body["id"].clone()).unwrap(),
            text: "Answer: x".into(),
        }),
    });
    let c = client(&server.url);
    assert_eq!(c.generate(&InstanceId::Int(9), "p", &GenParams::default()).unwrap(), "Answer: x");
    assert_eq!(server.request_count(), 4);
    let stats = c.stats();
    assert_eq!((stats.requests, stats.retries, stats.failures), (4, 3, 0));
}

#[test]
fn exhausts_retry_budget() {
    let server = TestServer::start(|_| error(502, "bad gateway"));
    let c = client(&server.url);
    let err = c.generate(&InstanceId::Int(1), "p", &GenParams::default()).unwrap_err();
    match &err {
        BackendError::Exhausted { attempts, last } => {
            assert_eq!(*attempts, 4);
            assert!(last.contains("bad gateway"), "{last}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.is_transport());
    assert_eq!(server.request_count(), 4);
    assert_eq!(c.stats().failures, 1);
}

#[test]
fn client_errors_are_not_retried() {
    let server = TestServer::start(|_| error(422, "input exceeds maximum sequence length"));
    let err = client(&server.url).label_tokens(&InstanceId::Int(1), "x").unwrap_err();
    assert_eq!(
        err,
        BackendError::Status {
            status: 422,
            message: "input exceeds maximum sequence length".into()
        }
    );
    assert!(!err.is_transport());
    assert_eq!(server.request_count(), 1);
}

#[test]
fn unreachable_service_is_transport_failure() {
    let c = HttpBackend::new(BackendEndpoint {
        retry_budget: 1,
        backoff_ms: 1,
        ..BackendEndpoint::new(common::dead_url())
    })
    .unwrap();
    let err = c.generate(&InstanceId::Int(1), "p", &GenParams::default()).unwrap_err();
    assert!(matches!(err, BackendError::Exhausted { attempts: 2, .. }), "{err:?}");
}

#[test]
fn slow_service_times_out() {
    let server = TestServer::start(|req| {
        std::thread::sleep(Duration::from_millis(400));
        ok(&json!({ "id": req.body["id"], "text": "late" }))
    });
    let c = HttpBackend::new(BackendEndpoint {
        retry_budget: 0,
        timeout_ms: 50,
        ..BackendEndpoint::new(server.url.clone())
    })
    .unwrap();
    let err = c.generate(&InstanceId::Int(1), "p", &GenParams::default()).unwrap_err();
    assert!(matches!(err, BackendError::Exhausted { attempts: 1, .. }), "{err:?}");
}

#[test]
fn malformed_bodies_are_rejected_without_retry() {
    let server = TestServer::start(|req| match req.body["id"].as_i64() {
        Some(1) => (200, "{\"id\": 1".into()),
        Some(2) => ok(&json!({ "id": 2 })),
        Some(3) => ok(&json!({ "id": 99, "text": "Answer: None" })),
        _ => ok(&json!({ "id": "3", "text": "Answer: None" })),
    });
    let c = client(&server.url);
    for id in 1..=4 {
        let err = c.generate(&InstanceId::Int(id), "p", &GenParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::Malformed(_)), "id {id}: {err:?}");
    }
    assert_eq!(server.request_count(), 4);
}

#[test]
fn invalid_token_spans_are_rejected() {
    let cases = vec![
        vec![tok(0, 3, 0), tok(2, 5, 1)],
        vec![tok(0, 6, 0)],
        vec![tok(0, 5, 2)],
        vec![tok(3, 3, 0)],
    ];
    let cases = Arc::new(cases);
    let served = cases.clone();
    let server = TestServer::start(move |req| {
        let id: InstanceId = serde_json::from_value(req.body["id"].clone()).unwrap();
        let InstanceId::Int(i) = id else { unreachable!() };
        ok(&LabelTokensResponse { tokens: served[i as usize].clone(), id })
    });
    let c = client(&server.url);
    for i in 0..cases.len() {
        let err = c.label_tokens(&InstanceId::Int(i as i64), "héllo").unwrap_err();
        assert!(matches!(err, BackendError::InvalidSpans(_)), "case {i}: {err:?}");
    }
}

#[test]
fn fan_out_respects_in_flight_limit() {
    let corpus = synthesize_corpus(&SynthParams::new(5, 24)).unwrap();
    let oracle = MockGenerator::new(GenerationMock::Oracle, common::golds(&corpus));
    let server = TestServer::start(move |req| {
        std::thread::sleep(Duration::from_millis(30));
        let id: InstanceId = serde_json::from_value(req.body["id"].clone()).unwrap();
        let prompt = req.body["prompt"].as_str().unwrap();
        ok(&GenerateResponse { text: oracle.generate(&id, prompt, &GenParams::default()).unwrap(), id })
    });
    let c = client(&server.url);
    let out = changepoint::pipeline::run_decoder(&c, &corpus, &GenParams::default(), 3);
    assert!(out.failures.is_empty());
    assert!(server.peak_in_flight() <= 3, "peak {}", server.peak_in_flight());
    assert!(server.peak_in_flight() >= 2, "requests never overlapped");
    for (p, i) in out.predictions.iter().zip(&corpus) {
        assert_eq!(p.value, i.gold_boundary.unwrap() as f64);
    }
    let first = server.requests().into_iter().find(|r| r.body["id"] == json!(0)).unwrap();
    assert_eq!(first.body["prompt"], build_prompt(&corpus[0].text).as_str());
}

#[test]
fn pipeline_over_http_matches_gold() {
    let corpus = synthesize_corpus(&SynthParams::new(21, 60)).unwrap();
    let golds = common::golds(&corpus);
    let server = TestServer::from_mocks(
        MockGenerator::new(GenerationMock::Oracle, golds.clone()),
        MockLabeler::new(LabelerMock::Oracle, golds),
    );
    let config: PipelineConfig = toml::from_str(&format!(
        r#"
name = "http-oracle"
use_break_at_inference = true
[decoder]
backend = {{ kind = "http", base_url = "{url}", max_in_flight = 4 }}
[[encoders]]
name = "enc"
training_data = "decoder_predictions"
backend = {{ kind = "http", base_url = "{url}", max_in_flight = 4 }}
"#,
        url = server.url
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    changepoint::corpus::write_jsonl(std::fs::File::create(&input).unwrap(), &corpus).unwrap();
    let summary = cmd_run(
        &config,
        &RunOptions {
            input: Some(input),
            work_dir: Some(dir.path().join("work")),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!((summary.predictions, summary.failures), (60, 0));
    let preds = changepoint::pipeline::read_predictions(&summary.output).unwrap();
    assert_eq!(score(&preds, &corpus).unwrap().mae, 0.0);
    // One generate and one label_tokens call per instance.
    assert_eq!(server.request_count(), 120);
    let marked = server.requests().into_iter().filter(|r| r.path == "/v1/label_tokens").count();
    assert_eq!(marked, 60);
}
