//! In-process responder standing in for a model endpoint.
//!
//! Replies are looked up by record id, then by prompt text, then fall back to
//! an optional default. Every call is counted and the peak number of
//! simultaneous calls is tracked, so tests can check caching and
//! concurrency bounds without a network.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use super::{BackendError, ChatBackend, ChatRequest, CompletionJob};
use crate::corpus::{DatasetSplit, EmotionCategory, UtteranceKey};
use crate::templates::{render_causes, render_joint_pairs, InstructionRecord, Stage, NO_CAUSE};

#[derive(Debug, Default)]
pub struct MockBackend {
    by_id: HashMap<String, String>,
    by_prompt: HashMap<String, String>,
    default_reply: Option<String>,
    delay: Duration,
    scripted_failures: Mutex<VecDeque<BackendError>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answers every request with `reply`.
    pub fn constant(reply: impl Into<String>) -> Self {
        Self {
            default_reply: Some(reply.into()),
            ..Self::default()
        }
    }

    pub fn from_id_replies(replies: HashMap<String, String>) -> Self {
        Self {
            by_id: replies,
            ..Self::default()
        }
    }

    /// Answers with the gold label or gold causes of the addressed utterance.
    ///
    /// Covers ERC, ECPE and JOINT records of every conversation in `split`;
    /// utterances without gold labels answer neutral and unannotated
    /// conversations answer with no causes.
    pub fn gold_oracle(split: &DatasetSplit) -> Self {
        let mut by_id = HashMap::new();
        for c in &split.conversations {
            for u in &c.utterances {
                let key = UtteranceKey::new(c.id.clone(), u.index);
                let label = u.gold_emotion.unwrap_or(EmotionCategory::Neutral);
                by_id.insert(InstructionRecord::make_id(&key, Stage::Erc), label.to_string());
                let causes = c.gold_causes(u.index).unwrap_or_default();
                by_id.insert(InstructionRecord::make_id(&key, Stage::Ecpe), render_causes(&causes));
            }
            if !c.is_empty() {
                let key = UtteranceKey::new(c.id.clone(), c.len() as u32);
                let joint = c.gold_pairs.as_deref().map_or_else(|| NO_CAUSE.to_string(), render_joint_pairs);
                by_id.insert(InstructionRecord::make_id(&key, Stage::Joint), joint);
            }
        }
        Self::from_id_replies(by_id)
    }

    /// Reads a JSON object mapping record ids to replies.
    pub fn from_replies_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let replies: HashMap<String, String> =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::from_id_replies(replies))
    }

    pub fn with_prompt_reply(mut self, prompt: impl Into<String>, reply: impl Into<String>) -> Self {
        self.by_prompt.insert(prompt.into(), reply.into());
        self
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default_reply = Some(reply.into());
        self
    }

    /// Holds each call open for `delay`, so overlapping calls become visible.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    /// Queues errors returned by the next calls, in order.
    pub fn with_failures(self, failures: impl IntoIterator<Item = BackendError>) -> Self {
        self.scripted_failures.lock().unwrap().extend(failures);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn lookup(&self, job: &CompletionJob) -> Option<String> {
        self.by_id
            .get(&job.id)
            .or_else(|| self.by_prompt.get(&job.prompt))
            .or(self.default_reply.as_ref())
            .cloned()
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn send(&self, job: &CompletionJob, _request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        if let Some(failure) = self.scripted_failures.lock().unwrap().pop_front() {
            return Err(failure);
        }
        self.lookup(job)
            .ok_or_else(|| BackendError::Fatal(format!("mock has no reply for record {}", job.id)))
    }
}
