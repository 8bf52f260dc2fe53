mod common;

use std::time::Duration;

use common::fake_server::{FakeServer, Reply};
use kline_corpus::annotate::{annotate, AnnotateError, BackendError, ChatBackend, HttpBackend, HttpSettings, RetryPolicy};
use kline_corpus::market::SymbolId;
use kline_corpus::prompt::AnnotationRequest;
use kline_corpus::sampler::{RecordId, Window};
use kline_corpus::Stage;

fn request(system: &str) -> AnnotationRequest {
    AnnotationRequest {
        stage: Stage::Pretrain,
        system_prompt: system.into(),
        user_content: "date open high low close volume\n2020-01-02 1.0000 1.0000 1.0000 1.0000 10".into(),
        record_id: RecordId::from_string("00000000000000aa"),
        window: Window {
            symbol_id: SymbolId::from_opaque("sym_http"),
            start: 0,
            total_len: 60,
            prompt_len: 40,
        },
    }
}

fn backend(server: &FakeServer) -> HttpBackend {
    HttpBackend::with_key(
        HttpSettings {
            endpoint: server.url.clone(),
            model: "test-model".into(),
            api_key_env: "UNUSED".into(),
            temperature: 0.3,
            timeout_secs: 5,
        },
        "sk-test-abc".into(),
    )
}

fn quick() -> RetryPolicy {
    RetryPolicy {
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
        ..RetryPolicy::default()
    }
}

#[test]
fn sends_chat_body_and_reads_first_choice() {
    let server = FakeServer::start(|_, _| Reply::completion("## Overview\n\nFine."));
    let b = backend(&server);
    assert_eq!(b.complete(&request("be an analyst")).unwrap(), "## Overview\n\nFine.");
    let seen = server.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].header("authorization"), Some("Bearer sk-test-abc"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(b.backend_id(), "http:test-model");
}

#[test]
fn empty_system_prompt_sends_user_message_only() {
    let server = FakeServer::start(|_, _| Reply::completion("ok"));
    backend(&server).complete(&request("")).unwrap();
    let msgs = server.requests()[0].body["messages"].as_array().unwrap().clone();
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0]["role"], "user");
}

#[test]
fn status_codes_map_to_errors() {
    let server = FakeServer::start(|i, _| match i {
        0 => Reply::status(401, r#"{"error":"bad key"}"#),
        1 => Reply {
            status: 429,
            headers: vec![("Retry-After".into(), "2".into())],
            body: "{}".into(),
        },
        2 => Reply::status(503, "overloaded"),
        3 => Reply::status(400, "bad request"),
        _ => Reply::status(200, r#"{"choices":[]}"#),
    });
    let b = backend(&server);
    let r = request("s");
    assert_eq!(b.complete(&r), Err(BackendError::Auth { status: 401 }));
    assert_eq!(
        b.complete(&r),
        Err(BackendError::RateLimited {
            retry_after: Some(Duration::from_secs(2))
        })
    );
    assert!(matches!(b.complete(&r), Err(BackendError::Server { status: 503, .. })));
    assert!(matches!(b.complete(&r), Err(BackendError::Rejected { status: 400, .. })));
    assert!(matches!(b.complete(&r), Err(BackendError::InvalidResponse(_))));
}

#[test]
fn retries_transient_failures_then_succeeds() {
    let server = FakeServer::start(|i, _| match i {
        0 => Reply::status(500, "boom"),
        1 => Reply::status(429, "{}"),
        _ => Reply::completion("third time"),
    });
    let resp = annotate(&request("s"), &backend(&server), &quick()).unwrap();
    assert_eq!(resp.attempt, 3);
    assert_eq!(resp.raw_text, "third time");
    assert_eq!(resp.record_id.as_str(), "00000000000000aa");
}

#[test]
fn auth_failure_is_fatal_and_exhaustion_is_reported() {
    let server = FakeServer::start(|_, _| Reply::status(403, "no"));
    let err = annotate(&request("s"), &backend(&server), &quick()).unwrap_err();
    assert_eq!(err, AnnotateError::AuthFailure { status: 403 });
    assert_eq!(server.requests().len(), 1);

    let server = FakeServer::start(|_, _| Reply::status(502, "down"));
    let err = annotate(&request("s"), &backend(&server), &quick()).unwrap_err();
    assert!(matches!(err, AnnotateError::BackendExhausted { attempts: 5, .. }));
    assert_eq!(server.requests().len(), 5);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let b = HttpBackend::with_key(
        HttpSettings {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            timeout_secs: 2,
            ..HttpSettings::default()
        },
        "k".into(),
    );
    assert!(matches!(b.complete(&request("s")), Err(BackendError::Transport(_))));
}
