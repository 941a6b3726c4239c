//! Chat-completion backends behind a caching, retrying client.
//!
//! [`Client`] owns the policy (response cache, retry schedule, concurrency
//! permits) and delegates the actual call to a [`Backend`]: the HTTP
//! implementation, the rule-based mock, or a replay of recorded outputs.

mod cache;
mod http;
mod mock;
mod replay;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::{annotate_by_rule, MockBackend};
pub use replay::{read_replay_file, write_replay_file, ReplayBackend, ReplayRecord};

use crate::digest::FieldHasher;
use crate::error::Result as CrateResult;
use crate::prompting::PromptBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_message: String,
    pub user_message: String,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
}

impl CompletionRequest {
    pub fn new(
        system_message: impl Into<String>,
        user_message: impl Into<String>,
        model_id: impl Into<String>,
        temperature: f64,
        top_p: f64,
    ) -> Self {
        CompletionRequest {
            system_message: system_message.into(),
            user_message: user_message.into(),
            model_id: model_id.into(),
            temperature,
            top_p,
        }
    }

    pub fn from_prompt(bundle: &PromptBundle, model_id: &str, temperature: f64, top_p: f64) -> Self {
        Self::new(
            bundle.system_message.clone(),
            bundle.user_message.clone(),
            model_id,
            temperature,
            top_p,
        )
    }

    /// SHA-256 over every field, length-prefixed.
    pub fn digest(&self) -> String {
        FieldHasher::new("completion-request/v1")
            .str(&self.system_message)
            .str(&self.user_message)
            .str(&self.model_id)
            .f64(self.temperature)
            .f64(self.top_p)
            .finish_hex()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
    Cache,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
            BackendKind::Replay => "replay",
            BackendKind::Cache => "cache",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    /// Raw model output, before [`clean_output`].
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("API key environment variable {var} is not set")]
    AuthMissing { var: String },
    #[error("transient failure (status {status:?}): {message}")]
    Transient { status: Option<u16>, message: String },
    #[error("request rejected with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    ExhaustedRetries {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no recorded response for request {digest}")]
    ReplayMiss { digest: String },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient { .. })
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Performs one call. Retrying is the client's job.
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Delay before retry `i` is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
    pub max_concurrent_requests: usize,
    pub cache_dir: Option<std::path::PathBuf>,
    /// Append every outgoing request body, byte for byte, to this file.
    pub log_requests: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_ms: 60_000,
            max_retries: 4,
            backoff_ms: vec![500, 1_000, 2_000, 4_000, 8_000],
            max_concurrent_requests: 8,
            cache_dir: None,
            log_requests: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> CrateResult<()> {
        if self.max_concurrent_requests == 0 {
            return Err(crate::Error::validation("max_concurrent_requests must be >= 1"));
        }
        if self.timeout_ms == 0 {
            return Err(crate::Error::validation("timeout_ms must be > 0"));
        }
        Ok(())
    }

    fn backoff(&self, retry: u32) -> Duration {
        match self.backoff_ms.as_slice() {
            [] => Duration::ZERO,
            s => Duration::from_millis(s[(retry as usize).min(s.len() - 1)]),
        }
    }
}

/// Counting semaphore bounding in-flight backend calls.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct Client {
    backend: Arc<dyn Backend>,
    config: BackendConfig,
    disk: Option<ResponseCache>,
    memory: Mutex<HashMap<String, String>>,
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    permits: Permits,
    backend_calls: AtomicUsize,
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> CrateResult<Self> {
        config.validate()?;
        let disk = config.cache_dir.as_ref().map(ResponseCache::new);
        Ok(Client {
            backend,
            permits: Permits::new(config.max_concurrent_requests),
            config,
            disk,
            memory: Mutex::new(HashMap::new()),
            in_flight: Mutex::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
        })
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend), BackendConfig::default()).expect("default config is valid")
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Number of times the backend has been invoked (cache hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    fn cached(&self, digest: &str) -> Option<String> {
        if let Some(t) = self.memory.lock().expect("cache lock").get(digest) {
            return Some(t.clone());
        }
        let text = self.disk.as_ref()?.get(digest)?;
        self.memory
            .lock()
            .expect("cache lock")
            .insert(digest.to_owned(), text.clone());
        Some(text)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let started = Instant::now();
        let digest = request.digest();
        let hit = |text| CompletionResult {
            text,
            backend: BackendKind::Cache,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: 1,
        };
        if let Some(text) = self.cached(&digest) {
            return Ok(hit(text));
        }

        // One caller per digest reaches the backend; the rest wait and hit the cache.
        let slot = self
            .in_flight
            .lock()
            .expect("in-flight lock")
            .entry(digest.clone())
            .or_default()
            .clone();
        let _held = slot.lock().expect("digest lock");
        if let Some(text) = self.cached(&digest) {
            return Ok(hit(text));
        }

        let outcome = self.call_with_retries(request);
        if let Ok((text, _)) = &outcome {
            if let Some(disk) = &self.disk {
                if let Err(e) = disk.put(&digest, &request.model_id, text) {
                    log::warn!("could not write cache entry {digest}: {e}");
                }
            }
            self.memory
                .lock()
                .expect("cache lock")
                .insert(digest.clone(), text.clone());
        }
        self.in_flight.lock().expect("in-flight lock").remove(&digest);
        let (text, attempt) = outcome?;

        Ok(CompletionResult {
            text,
            backend: self.backend.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempt,
        })
    }

    fn call_with_retries(&self, request: &CompletionRequest) -> Result<(String, u32), BackendError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.permits.acquire();
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                self.backend.send(request)
            };
            match outcome {
                Ok(text) => return Ok((text, attempt)),
                Err(BackendError::Transient { status, message }) => {
                    if attempt > self.config.max_retries {
                        return Err(BackendError::ExhaustedRetries {
                            attempts: attempt,
                            last_status: status,
                            message,
                        });
                    }
                    log::warn!("transient backend failure (status {status:?}), attempt {attempt}: {message}");
                    std::thread::sleep(self.config.backoff(attempt - 1));
                }
                Err(other) => return Err(other),
            }
        }
    }

    /// Runs `requests` on up to `parallelism` worker threads. Results are in
    /// request order and failures stay in their own slot.
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> CrateResult<Vec<Result<CompletionResult, BackendError>>> {
        if parallelism == 0 || parallelism > self.config.max_concurrent_requests {
            return Err(crate::Error::contract(format!(
                "parallelism {parallelism} must be within 1..={}",
                self.config.max_concurrent_requests
            )));
        }
        let slots: Vec<Mutex<Option<Result<CompletionResult, BackendError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..parallelism.min(requests.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let r = self.complete(&requests[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        Ok(slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect())
    }
}

/// Strips surrounding whitespace and a wrapping Markdown code fence.
pub fn clean_output(text: &str) -> String {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix("```") {
        if let Some(body) = inner.strip_suffix("```") {
            // Drop an info string such as ```text on the opening line.
            let body = match body.split_once('\n') {
                Some((first, rest)) if !first.trim().contains(' ') => rest,
                _ => body,
            };
            return body.trim().to_owned();
        }
    }
    t.to_owned()
}
