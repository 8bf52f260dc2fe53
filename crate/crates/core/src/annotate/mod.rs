//! Dispatching annotation requests to a chat-completion backend.
//!
//! [`annotate`] retries transient failures with jittered exponential backoff;
//! [`annotate_batch`] fans a list out over a bounded number of worker threads and
//! returns results in input order.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpSettings};
pub use mock::{MockBackend, MockFaults, PREDICTION_QUESTION};

use crate::prompt::AnnotationRequest;
use crate::sampler::RecordId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("authentication rejected ({status})")]
    Auth { status: u16 },
    #[error("request rejected {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. } | BackendError::Server { .. }
        )
    }
}

/// A chat-completion service. Implementations are shared across worker threads.
pub trait ChatBackend: Send + Sync {
    /// Identifier recorded in the corpus manifest, e.g. `mock-v1` or `http:gpt-4o-mini`.
    fn backend_id(&self) -> String;

    fn complete(&self, request: &AnnotationRequest) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn complete(&self, request: &AnnotationRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_factor: f64,
    pub max_backoff_ms: u64,
    /// Scale each delay by a factor in [0.5, 1.0] derived from the record id.
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 1_000,
            backoff_factor: 2.0,
            max_backoff_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `failed + 1`, given `failed` failures so far.
    pub fn backoff(&self, record_id: &RecordId, failed: u32) -> Duration {
        let exp = self.backoff_factor.max(1.0).powi(failed.saturating_sub(1) as i32);
        let base = (self.initial_backoff_ms as f64 * exp).min(self.max_backoff_ms as f64);
        let scale = if self.jitter {
            let mut h = Sha256::new();
            h.update(record_id.as_str().as_bytes());
            h.update(failed.to_le_bytes());
            let d = h.finalize();
            let unit = u16::from_le_bytes([d[0], d[1]]) as f64 / u16::MAX as f64;
            0.5 + 0.5 * unit
        } else {
            1.0
        };
        Duration::from_millis((base * scale).round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub record_id: RecordId,
    pub raw_text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    /// 1-based attempt that succeeded.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotateError {
    #[error("backend failed {attempts} times, last error: {last}")]
    BackendExhausted { attempts: u32, last: BackendError },
    #[error("backend rejected credentials ({status})")]
    AuthFailure { status: u16 },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("non-retryable backend error: {0}")]
    Fatal(BackendError),
}

impl AnnotateError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::BackendExhausted { .. } => "backend_exhausted",
            AnnotateError::AuthFailure { .. } => "auth_failure",
            AnnotateError::EmptyCompletion => "empty_completion",
            AnnotateError::Fatal(_) => "backend_fatal",
        }
    }
}

/// Sends one request, retrying transient failures per `policy`.
pub fn annotate(
    request: &AnnotationRequest,
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
) -> Result<AnnotationResponse, AnnotateError> {
    let max_attempts = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let started = Instant::now();
        match backend.complete(request) {
            Ok(text) => {
                if text.trim().is_empty() {
                    return Err(AnnotateError::EmptyCompletion);
                }
                return Ok(AnnotationResponse {
                    record_id: request.record_id.clone(),
                    raw_text: text,
                    backend_id: backend.backend_id(),
                    latency_ms: started.elapsed().as_millis() as u64,
                    attempt,
                });
            }
            Err(BackendError::Auth { status }) => return Err(AnnotateError::AuthFailure { status }),
            Err(e) if !e.is_retryable() => return Err(AnnotateError::Fatal(e)),
            Err(e) => {
                if attempt >= max_attempts {
                    return Err(AnnotateError::BackendExhausted {
                        attempts: attempt,
                        last: e,
                    });
                }
                let mut delay = policy.backoff(&request.record_id, attempt);
                if let BackendError::RateLimited {
                    retry_after: Some(after),
                } = &e
                {
                    delay = delay.max(*after);
                }
                log::debug!(
                    "record {}: attempt {attempt} failed ({e}); retrying in {delay:?}",
                    request.record_id
                );
                std::thread::sleep(delay);
            }
        }
    }
}

/// Annotates every request with at most `max_in_flight` outstanding at once.
/// The output is in input order; failures are reported per item.
pub fn annotate_batch(
    requests: &[AnnotationRequest],
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
    max_in_flight: usize,
) -> Vec<Result<AnnotationResponse, AnnotateError>> {
    let workers = max_in_flight.max(1).min(requests.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<AnnotationResponse, AnnotateError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else {
                    break;
                };
                let result = annotate(request, backend, policy);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot lock")
                .expect("every request was processed")
        })
        .collect()
}
