//! Chat-completion calls with retries, a persistent reply cache and a hard
//! bound on concurrent requests.

mod cache;
mod http;
mod mock;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::templates::{InstructionRecord, RecordLine};

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use http::{extract_reply, ChatMessage, ChatRequest, HttpBackend};
pub use mock::MockBackend;

/// How a simulated endpoint answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockSpec {
    /// Gold labels and causes of the evaluation split.
    Gold,
    /// A JSON object mapping record ids to replies.
    Replies(PathBuf),
    /// The same reply for every request.
    Constant(String),
}

impl std::str::FromStr for MockSpec {
    type Err = String;

    /// `gold`, `constant:<reply>`, or a path to a replies file.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "gold" {
            Ok(MockSpec::Gold)
        } else if let Some(reply) = s.strip_prefix("constant:") {
            Ok(MockSpec::Constant(reply.to_string()))
        } else if s.is_empty() {
            Err("empty mock endpoint specification".into())
        } else {
            Ok(MockSpec::Replies(PathBuf::from(s)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Either the API root (`…/v1`) or the full `…/chat/completions` URL.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; no auth header when unset.
    pub auth_env_var: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub system_message: Option<String>,
    /// First retry delay; each further retry doubles it.
    pub backoff_base_ms: u64,
    /// Answer locally instead of calling `base_url`.
    pub mock: Option<MockSpec>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "chatglm3-6b".into(),
            auth_env_var: None,
            temperature: 0.0,
            max_output_tokens: 128,
            request_timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            system_message: None,
            backoff_base_ms: 1000,
            mock: None,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |msg: String| Err(InferenceError::Config(msg));
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be a non-negative number, got {}", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return bad("request_timeout_secs must be positive".into());
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name must not be empty".into());
        }
        if self.mock.is_none() && !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url must be an http(s) URL, got {:?}", self.base_url));
        }
        Ok(())
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.backoff_base_ms as f64 * 2f64.powi(retry.saturating_sub(1).min(16) as i32);
        let jitter = rand::thread_rng().gen_range(0.5..=1.0);
        Duration::from_millis((base * jitter) as u64)
    }
}

/// What a backend reports for a failed call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transient failure{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Retryable { status: Option<u16>, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
pub enum InferenceError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("cache write failed: {0}")]
    Cache(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

/// Something to send: a record id and its prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionJob {
    pub id: String,
    pub prompt: String,
}

impl From<&InstructionRecord> for CompletionJob {
    fn from(record: &InstructionRecord) -> Self {
        Self {
            id: record.record_id.clone(),
            prompt: record.prompt.clone(),
        }
    }
}

impl From<&RecordLine> for CompletionJob {
    fn from(line: &RecordLine) -> Self {
        Self {
            id: line.id.clone(),
            prompt: line.instruction.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompletionResult {
    pub record_id: String,
    pub reply: String,
    pub from_cache: bool,
    pub latency_ms: u64,
    /// 0 for cache hits.
    pub attempts: u32,
}

/// A model endpoint, real or simulated.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn send(&self, job: &CompletionJob, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InferenceStats {
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub network_calls: usize,
}

/// Sends jobs to one endpoint through an optional cache.
#[derive(Clone)]
pub struct InferenceClient {
    cfg: EndpointConfig,
    backend: Arc<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    cache_hits: Arc<AtomicUsize>,
    cache_misses: Arc<AtomicUsize>,
    network_calls: Arc<AtomicUsize>,
}

impl InferenceClient {
    pub fn new(cfg: EndpointConfig, backend: Arc<dyn ChatBackend>, cache: Option<ResponseCache>) -> Result<Self, InferenceError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            backend,
            cache,
            cache_hits: Arc::default(),
            cache_misses: Arc::default(),
            network_calls: Arc::default(),
        })
    }

    /// A client talking HTTP to `cfg.base_url`.
    pub fn http(cfg: EndpointConfig, cache: Option<ResponseCache>) -> Result<Self, InferenceError> {
        let backend = HttpBackend::new(&cfg).map_err(|e| InferenceError::Config(e.to_string()))?;
        Self::new(cfg, Arc::new(backend), cache)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn stats(&self) -> InferenceStats {
        InferenceStats {
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            cache_misses: self.cache_misses.load(Ordering::SeqCst),
            network_calls: self.network_calls.load(Ordering::SeqCst),
        }
    }

    pub async fn complete_one(&self, job: &CompletionJob) -> Result<CompletionResult, InferenceError> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let key = cache_key(&job.prompt, &cfg.model_name, cfg.temperature, cfg.max_output_tokens);
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(CompletionResult {
                record_id: job.id.clone(),
                reply: entry.reply,
                from_cache: true,
                latency_ms: started.elapsed().as_millis() as u64,
                attempts: 0,
            });
        }
        self.cache_misses.fetch_add(1, Ordering::SeqCst);

        let request = ChatRequest::new(cfg, &job.prompt);
        let mut attempts = 0;
        let reply = loop {
            attempts += 1;
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(job, &request).await {
                Ok(reply) => break reply,
                Err(BackendError::Retryable { status, message }) => {
                    if attempts > cfg.max_retries {
                        let last_error = match status {
                            Some(s) => format!("HTTP {s}: {message}"),
                            None => message,
                        };
                        return Err(InferenceError::RetriesExhausted { attempts, last_error });
                    }
                    let delay = cfg.backoff(attempts);
                    log::debug!("{}: attempt {attempts} failed ({message}); retrying in {delay:?}", job.id);
                    tokio::time::sleep(delay).await;
                }
                Err(BackendError::Auth(msg)) => return Err(InferenceError::Auth(msg)),
                Err(BackendError::Malformed(msg)) => return Err(InferenceError::Malformed(msg)),
                Err(BackendError::Fatal(msg)) => return Err(InferenceError::Rejected(msg)),
            }
        };

        if let Some(cache) = &self.cache {
            let entry = CacheEntry::new(&job.prompt, &cfg.model_name, cfg.temperature, cfg.max_output_tokens, reply.clone());
            cache.put(&entry).map_err(|e| InferenceError::Cache(e.to_string()))?;
        }
        Ok(CompletionResult {
            record_id: job.id.clone(),
            reply,
            from_cache: false,
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
        })
    }

    /// Completes every job with at most `max_in_flight` outstanding at once.
    /// Results come back in input order; failures stay per job.
    pub async fn complete_all(&self, jobs: &[CompletionJob]) -> Vec<Result<CompletionResult, InferenceError>> {
        let mut seen = HashSet::new();
        let duplicate: Vec<bool> = jobs.iter().map(|j| !seen.insert(j.id.as_str())).collect();
        stream::iter(jobs.iter().zip(duplicate))
            .map(|(job, dup)| async move {
                if dup {
                    Err(InferenceError::DuplicateId(job.id.clone()))
                } else {
                    self.complete_one(job).await
                }
            })
            .buffered(self.cfg.max_in_flight)
            .collect()
            .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EndpointConfig {
        EndpointConfig {
            backoff_base_ms: 1,
            ..EndpointConfig::new("http://localhost:9", "mock")
        }
    }

    fn job(id: &str) -> CompletionJob {
        CompletionJob {
            id: id.into(),
            prompt: format!("prompt for {id}"),
        }
    }

    fn retryable(status: u16) -> BackendError {
        BackendError::Retryable {
            status: Some(status),
            message: "busy".into(),
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(EndpointConfig { max_in_flight: 0, ..cfg() }.validate().is_err());
        assert!(EndpointConfig { temperature: -0.1, ..cfg() }.validate().is_err());
        assert!(EndpointConfig { base_url: "ftp://x".into(), ..cfg() }.validate().is_err());
        assert_eq!(cfg().completions_url(), "http://localhost:9/chat/completions");
        let full = EndpointConfig::new("http://h/v1/chat/completions/", "m");
        assert_eq!(full.completions_url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn mock_spec_parsing() {
        assert_eq!("gold".parse(), Ok(MockSpec::Gold));
        assert_eq!("constant:neutral".parse(), Ok(MockSpec::Constant("neutral".into())));
        assert_eq!("r.json".parse(), Ok(MockSpec::Replies("r.json".into())));
    }

    #[tokio::test]
    async fn cache_hit_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(MockBackend::constant("joy"));
        let cache = ResponseCache::open(dir.path()).unwrap();
        let client = InferenceClient::new(cfg(), backend.clone(), Some(cache)).unwrap();
        let first = client.complete_one(&job("a")).await.unwrap();
        let second = client.complete_one(&job("a")).await.unwrap();
        assert_eq!((first.from_cache, first.attempts), (false, 1));
        assert_eq!((second.from_cache, second.attempts), (true, 0));
        assert_eq!(first.reply, second.reply);
        assert_eq!(backend.calls(), 1);
        assert_eq!(client.stats(), InferenceStats { cache_hits: 1, cache_misses: 1, network_calls: 1 });
    }

    #[tokio::test]
    async fn retries_then_succeeds() {
        let backend = Arc::new(MockBackend::constant("joy").with_failures([retryable(429)]));
        let client = InferenceClient::new(cfg(), backend.clone(), None).unwrap();
        let result = client.complete_one(&job("a")).await.unwrap();
        assert_eq!(result.attempts, 2);
        assert_eq!(backend.calls(), 2);
    }

    #[tokio::test]
    async fn retries_exhaust() {
        let backend = Arc::new(MockBackend::constant("joy").with_failures((0..4).map(|_| retryable(503))));
        let client = InferenceClient::new(EndpointConfig { max_retries: 2, ..cfg() }, backend.clone(), None).unwrap();
        let err = client.complete_one(&job("a")).await.unwrap_err();
        assert!(matches!(err, InferenceError::RetriesExhausted { attempts: 3, .. }), "{err}");
        assert_eq!(backend.calls(), 3);
    }

    #[tokio::test]
    async fn auth_failures_do_not_retry() {
        let backend = Arc::new(MockBackend::constant("joy").with_failures([BackendError::Auth("401".into())]));
        let client = InferenceClient::new(cfg(), backend.clone(), None).unwrap();
        assert!(matches!(client.complete_one(&job("a")).await, Err(InferenceError::Auth(_))));
        assert_eq!(backend.calls(), 1);
    }

    #[tokio::test]
    async fn batch_keeps_order_and_bound() {
        let backend = Arc::new(MockBackend::new().with_delay(Duration::from_millis(20)).with_default("x"));
        let client = InferenceClient::new(EndpointConfig { max_in_flight: 3, ..cfg() }, backend.clone(), None).unwrap();
        let jobs: Vec<_> = (0..10).map(|i| job(&format!("r{i}"))).collect();
        let results = client.complete_all(&jobs).await;
        let ids: Vec<_> = results.iter().map(|r| r.as_ref().unwrap().record_id.clone()).collect();
        assert_eq!(ids, jobs.iter().map(|j| j.id.clone()).collect::<Vec<_>>());
        assert!(backend.peak_in_flight() <= 3);
        assert!(client.complete_all(&[]).await.is_empty());
    }

    #[tokio::test]
    async fn duplicate_ids_fail_individually() {
        let client = InferenceClient::new(cfg(), Arc::new(MockBackend::constant("x")), None).unwrap();
        let results = client.complete_all(&[job("a"), job("b"), job("a")]).await;
        assert!(results[0].is_ok() && results[1].is_ok());
        assert_eq!(results[2], Err(InferenceError::DuplicateId("a".into())));
    }
}
