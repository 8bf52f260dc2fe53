mod common;

use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Mutex;

use common::fake_server::{FakeServer, Reply};
use kline_corpus::annotate::{ChatBackend, MockBackend};
use kline_corpus::config::{BackendKind, PipelineConfig};
use kline_corpus::market::SymbolId;
use kline_corpus::pipeline::{build_backend, run_pipeline};
use kline_corpus::prompt::AnnotationRequest;
use kline_corpus::render::sha256_hex;
use kline_corpus::sampler::{RecordId, Window};
use kline_corpus::synth::synthetic_csv;
use kline_corpus::Stage;

const SECRET: &str = "sk-live-7f3a9c2e41d8b6051e2f";
const KEY_VAR: &str = "KLINE_CORPUS_TEST_API_KEY";

static LOG: Mutex<String> = Mutex::new(String::new());

struct Capture;

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }

    fn log(&self, record: &log::Record) {
        let line = format!("{} {} {}\n", record.level(), record.target(), record.args());
        LOG.lock().unwrap().push_str(&line);
    }

    fn flush(&self) {}
}

/// Answers like the mock backend would, so the corpus fills up normally.
fn answer(body: &serde_json::Value) -> String {
    let msgs = body["messages"].as_array().cloned().unwrap_or_default();
    let system = msgs.iter().find(|m| m["role"] == "system");
    let user = msgs.iter().find(|m| m["role"] == "user").and_then(|m| m["content"].as_str()).unwrap_or("");
    let request = AnnotationRequest {
        stage: if system.is_some() { Stage::Pretrain } else { Stage::Instruct },
        system_prompt: String::new(),
        user_content: user.to_string(),
        record_id: RecordId::from_string(&sha256_hex(user.as_bytes())[..16]),
        window: Window {
            symbol_id: SymbolId::from_opaque("sym_fake"),
            start: 0,
            total_len: 0,
            prompt_len: 0,
        },
    };
    MockBackend::default().complete(&request).unwrap_or_default()
}

fn scan(dir: &Path, hits: &mut Vec<String>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            scan(&path, hits);
        } else if fs::read(&path).unwrap().windows(SECRET.len()).any(|w| w == SECRET.as_bytes()) {
            hits.push(path.display().to_string());
        }
    }
}

#[test]
fn credential_never_reaches_disk_or_logs() {
    log::set_logger(&Capture).unwrap();
    log::set_max_level(log::LevelFilter::Trace);

    let server = FakeServer::start(|i, req| match i {
        // One transient failure so the retry path logs too.
        0 => Reply::status(503, "warming up"),
        _ => Reply::completion(&answer(&req.body)),
    });
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, synthetic_csv(&["600036", "000651"], 300, 8)).unwrap();
    let mut cfg = PipelineConfig {
        inputs: vec![input],
        output_dir: dir.path().join("out"),
        pretrain_count: 6,
        instruct_count: 6,
        ..PipelineConfig::default()
    };
    cfg.backend.kind = BackendKind::Http;
    cfg.backend.http.endpoint = server.url.clone();
    cfg.backend.http.api_key_env = KEY_VAR.into();
    cfg.backend.max_in_flight = 2;
    cfg.retry.initial_backoff_ms = 1;

    std::env::remove_var(KEY_VAR);
    let missing = build_backend(&cfg).err().expect("missing key must fail").to_string();
    assert!(missing.contains(KEY_VAR));

    std::env::set_var(KEY_VAR, SECRET);
    let backend = build_backend(&cfg).unwrap();
    let summary = run_pipeline(&cfg, backend.as_ref(), &AtomicBool::new(false)).unwrap();
    assert!(summary.exit_ok());
    assert_eq!(summary.counts.accepted, 12, "{summary:?}");
    assert!(server.requests().iter().all(|r| r.header("authorization") == Some(&format!("Bearer {SECRET}"))));

    // A rejected key must not leak through error text either.
    let denied = FakeServer::start(|_, _| Reply::status(401, "invalid key"));
    cfg.backend.http.endpoint = denied.url.clone();
    cfg.output_dir = dir.path().join("denied");
    let summary = run_pipeline(&cfg, build_backend(&cfg).unwrap().as_ref(), &AtomicBool::new(false)).unwrap();
    assert!(!summary.exit_ok());
    assert!(!serde_json::to_string(&summary).unwrap().contains(SECRET));

    let mut hits = Vec::new();
    scan(dir.path(), &mut hits);
    assert!(hits.is_empty(), "secret found in {hits:?}");
    let log = LOG.lock().unwrap();
    assert!(!log.is_empty());
    assert!(!log.contains(SECRET), "secret found in logs");
    let http = kline_corpus::annotate::HttpBackend::from_env(cfg.backend.http.clone()).unwrap();
    assert!(!format!("{http:?}").contains(SECRET));
    std::env::remove_var(KEY_VAR);
}
