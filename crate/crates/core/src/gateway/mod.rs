//! Uniform chat-completion access for every LLM call the optimizer makes.
//!
//! [`Gateway::complete`] is the single choke point: it validates the request,
//! charges one unit against the [`BudgetLedger`], retries transient backend
//! failures with exponential backoff, and appends a record to the call log.

mod calllog;
mod http;
mod ledger;
pub mod mock;

use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{digest_json, sha256_hex};

pub use calllog::{CallLog, CallRecord};
pub use http::{HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use ledger::BudgetLedger;
pub use mock::{mock_program, Matcher, MockBackend, MockRule, Responder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Why a call is made. Budget accounting is broken down by purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    ReflectShort,
    ReflectLong,
    Crossover,
    Mutate,
    Paraphrase,
    TaskInference,
}

impl Purpose {
    pub const ALL: [Purpose; 6] = [
        Purpose::ReflectShort,
        Purpose::ReflectLong,
        Purpose::Crossover,
        Purpose::Mutate,
        Purpose::Paraphrase,
        Purpose::TaskInference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::ReflectShort => "reflect_short",
            Purpose::ReflectLong => "reflect_long",
            Purpose::Crossover => "crossover",
            Purpose::Mutate => "mutate",
            Purpose::Paraphrase => "paraphrase",
            Purpose::TaskInference => "task_inference",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub purpose: Purpose,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role != Role::Assistant && m.content.trim().is_empty() {
                return Err(GatewayError::InvalidRequest(format!(
                    "message {i} ({:?}) is empty",
                    m.role
                )));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens is 0".into()));
        }
        Ok(())
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// Failure reported by a backend for one attempt.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("{message}")]
pub struct BackendError {
    /// Worth retrying (transport failure, 429, 5xx).
    pub transient: bool,
    pub status: Option<u16>,
    pub message: String,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            transient: true,
            status: None,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            transient: false,
            status: None,
            message: message.into(),
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("LLM call budget exhausted ({used} of {max} calls used)")]
    BudgetExhausted { used: u64, max: u64 },
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("backend returned an empty response for a {purpose} call")]
    MalformedOutput { purpose: Purpose },
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn is_budget(&self) -> bool {
        matches!(self, GatewayError::BudgetExhausted { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Pause before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        self.base_delay.mul_f64(exp)
    }
}

/// One captured request/response pair, kept in memory when capture is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct CapturedCall {
    pub request: CompletionRequest,
    pub request_digest: String,
    pub response: Option<String>,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    ledger: Mutex<BudgetLedger>,
    retry: RetryPolicy,
    log: Option<CallLog>,
    captured: Option<Mutex<Vec<CapturedCall>>>,
    epoch: AtomicU32,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, max_calls: u64) -> Self {
        Self {
            backend,
            ledger: Mutex::new(BudgetLedger::new(max_calls)),
            retry: RetryPolicy::default(),
            log: None,
            captured: None,
            epoch: AtomicU32::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_call_log(mut self, log: CallLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Keep every request and response in memory (see [`Gateway::captured`]).
    pub fn with_capture(mut self) -> Self {
        self.captured = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Epoch stamped on call-log records.
    pub fn set_epoch(&self, epoch: u32) {
        self.epoch.store(epoch, Ordering::Relaxed);
    }

    pub fn ledger(&self) -> BudgetLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    /// Restores counters from a checkpoint. The call cap stays as configured.
    pub fn restore_ledger(&self, snapshot: &BudgetLedger) {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        let max = ledger.calls_max;
        *ledger = snapshot.clone();
        ledger.calls_max = max;
    }

    pub fn captured(&self) -> Vec<CapturedCall> {
        self.captured
            .as_ref()
            .map(|c| c.lock().expect("capture lock").clone())
            .unwrap_or_default()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        self.ledger
            .lock()
            .expect("ledger lock")
            .charge(request.purpose)?;

        let started = Instant::now();
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            match self.backend.complete(request) {
                Ok(text) => break Ok(text),
                Err(err) if err.transient && attempts < self.retry.max_attempts => {
                    let delay = self.retry.delay_after(attempts);
                    tracing::warn!(
                        purpose = %request.purpose,
                        attempt = attempts,
                        "transient backend error, retrying in {delay:?}: {err}"
                    );
                    std::thread::sleep(delay);
                }
                Err(err) => {
                    break Err(GatewayError::Backend {
                        attempts,
                        source: err,
                    })
                }
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        let request_digest = request.digest();
        let response_text = outcome.as_ref().ok().cloned();
        if let Some(log) = &self.log {
            log.append(&CallRecord {
                purpose: request.purpose,
                request_digest: request_digest.clone(),
                response_digest: response_text.as_deref().map(|t| sha256_hex(t.as_bytes())),
                latency_ms,
                attempts,
                epoch: self.epoch.load(Ordering::Relaxed),
            });
        }
        if let Some(captured) = &self.captured {
            captured.lock().expect("capture lock").push(CapturedCall {
                request: request.clone(),
                request_digest,
                response: response_text,
            });
        }

        let text = outcome?;
        if text.trim().is_empty() {
            return Err(GatewayError::MalformedOutput {
                purpose: request.purpose,
            });
        }
        Ok(CompletionResponse {
            text,
            backend_id: self.backend.id().to_string(),
            latency_ms,
            attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Flaky {
        failures_left: AtomicUsize,
        transient: bool,
        calls: AtomicUsize,
    }

    impl Backend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let left = self.failures_left.load(Ordering::SeqCst);
            if left > 0 {
                self.failures_left.store(left - 1, Ordering::SeqCst);
                return Err(BackendError {
                    transient: self.transient,
                    status: Some(429),
                    message: "slow down".into(),
                });
            }
            Ok("fine".into())
        }
    }

    fn flaky(failures: usize, transient: bool) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures_left: AtomicUsize::new(failures),
            transient,
            calls: AtomicUsize::new(0),
        })
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            base_delay: Duration::from_millis(1),
            ..RetryPolicy::default()
        }
    }

    pub(crate) fn request(purpose: Purpose) -> CompletionRequest {
        CompletionRequest {
            messages: vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
            temperature: 0.7,
            max_tokens: 64,
            purpose,
        }
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_after(1), Duration::from_secs(1));
        assert_eq!(p.delay_after(2), Duration::from_secs(2));
        assert_eq!(p.delay_after(3), Duration::from_secs(4));
    }

    #[test]
    fn transient_failures_retry_within_one_budget_unit() {
        let backend = flaky(2, true);
        let gw = Gateway::new(backend.clone(), 10).with_retry(fast_retry());
        let resp = gw.complete(&request(Purpose::Mutate)).unwrap();
        assert_eq!(resp.attempts, 3);
        assert_eq!(resp.text, "fine");
        assert_eq!(gw.ledger().total(), 1);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_failure_surfaces_after_four_attempts() {
        let backend = flaky(10, true);
        let gw = Gateway::new(backend.clone(), 10).with_retry(fast_retry());
        let err = gw.complete(&request(Purpose::Mutate)).unwrap_err();
        assert!(matches!(err, GatewayError::Backend { attempts: 4, .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn permanent_failure_is_not_retried() {
        let backend = flaky(1, false);
        let gw = Gateway::new(backend.clone(), 10).with_retry(fast_retry());
        assert!(matches!(
            gw.complete(&request(Purpose::Mutate)),
            Err(GatewayError::Backend { attempts: 1, .. })
        ));
    }

    #[test]
    fn exhausted_budget_never_reaches_backend() {
        let backend = flaky(0, true);
        let gw = Gateway::new(backend.clone(), 1);
        gw.complete(&request(Purpose::Crossover)).unwrap();
        let err = gw.complete(&request(Purpose::Crossover)).unwrap_err();
        assert_eq!(err, GatewayError::BudgetExhausted { used: 1, max: 1 });
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_text_is_malformed() {
        let backend = Arc::new(mock_program(vec![MockRule::new(Matcher::Any, Responder::Fixed("  ".into()))]).unwrap());
        let gw = Gateway::new(backend, 5);
        assert_eq!(
            gw.complete(&request(Purpose::Paraphrase)).unwrap_err(),
            GatewayError::MalformedOutput {
                purpose: Purpose::Paraphrase
            }
        );
        assert_eq!(gw.ledger().total(), 1);
    }

    #[test]
    fn invalid_requests_cost_nothing() {
        let backend = flaky(0, true);
        let gw = Gateway::new(backend, 5);
        let mut req = request(Purpose::Mutate);
        req.messages[1].content = String::new();
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
        req.messages.clear();
        assert!(gw.complete(&req).is_err());
        assert_eq!(gw.ledger().total(), 0);
    }

    #[test]
    fn concurrent_callers_respect_the_cap() {
        let backend = flaky(0, true);
        let gw = Gateway::new(backend.clone(), 37);
        let items: Vec<usize> = (0..100).collect();
        let results = crate::parallel::parallel_map(&items, 8, |_, _| gw.complete(&request(Purpose::TaskInference)));
        let ok = results.iter().filter(|r| r.is_ok()).count();
        assert_eq!(ok, 37);
        assert_eq!(gw.ledger().total(), 37);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 37);
    }

    #[test]
    fn capture_records_requests() {
        let gw = Gateway::new(flaky(0, true), 5).with_capture();
        let req = request(Purpose::ReflectShort);
        gw.complete(&req).unwrap();
        let captured = gw.captured();
        assert_eq!(captured.len(), 1);
        assert_eq!(captured[0].request, req);
        assert_eq!(captured[0].request_digest, req.digest());
        assert_eq!(captured[0].response.as_deref(), Some("fine"));
    }
}
