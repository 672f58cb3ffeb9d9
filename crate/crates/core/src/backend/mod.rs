//! Model backends and call accounting.
//!
//! Two language-model tiers sit behind [`LanguageModel`]: the guidance tier
//! (graph writes during evolution) and the execution tier (the frozen model
//! that answers questions). Every call goes through [`Backends`], which
//! routes by agent, retries, and counts each attempt in a [`CallLedger`].

pub mod sim;

#[cfg(feature = "http")]
pub mod http;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Guidance,
    Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    SkillDiscovery,
    Navigator,
    Critic,
    Curator,
    Explorer,
    Learner,
}

impl Agent {
    pub const ALL: [Agent; 6] = [
        Agent::SkillDiscovery,
        Agent::Navigator,
        Agent::Critic,
        Agent::Curator,
        Agent::Explorer,
        Agent::Learner,
    ];

    pub fn tier(self) -> Tier {
        match self {
            Agent::SkillDiscovery | Agent::Navigator | Agent::Critic | Agent::Curator => Tier::Guidance,
            Agent::Explorer | Agent::Learner => Tier::Execution,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Agent::SkillDiscovery => "skill_discovery",
            Agent::Navigator => "navigator",
            Agent::Critic => "critic",
            Agent::Curator => "curator",
            Agent::Explorer => "explorer",
            Agent::Learner => "learner",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

impl BackendError {
    /// Transport failures and server-side errors are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Unreachable(_) => true,
            BackendError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub agent: Agent,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(agent: Agent, messages: Vec<ChatMessage>, temperature: f64) -> Self {
        Self {
            agent,
            messages,
            temperature,
            max_tokens: 1024,
        }
    }

    /// Content of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn system_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == "system")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// One attempt at a text completion. Implementations do not retry; the
/// [`Backends`] router does, so every attempt is counted.
///
/// There is deliberately no method that changes model weights.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Per-agent call tallies plus embedder calls. Counts include retries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub skill_discovery: u64,
    pub navigator: u64,
    pub critic: u64,
    pub curator: u64,
    pub explorer: u64,
    pub learner: u64,
    pub embedder: u64,
}

impl CallCounts {
    pub fn get(&self, agent: Agent) -> u64 {
        match agent {
            Agent::SkillDiscovery => self.skill_discovery,
            Agent::Navigator => self.navigator,
            Agent::Critic => self.critic,
            Agent::Curator => self.curator,
            Agent::Explorer => self.explorer,
            Agent::Learner => self.learner,
        }
    }

    fn slot(&mut self, agent: Agent) -> &mut u64 {
        match agent {
            Agent::SkillDiscovery => &mut self.skill_discovery,
            Agent::Navigator => &mut self.navigator,
            Agent::Critic => &mut self.critic,
            Agent::Curator => &mut self.curator,
            Agent::Explorer => &mut self.explorer,
            Agent::Learner => &mut self.learner,
        }
    }

    pub fn tier_total(&self, tier: Tier) -> u64 {
        Agent::ALL
            .iter()
            .filter(|a| a.tier() == tier)
            .map(|a| self.get(*a))
            .sum()
    }

    /// Guidance calls over all language-model calls; embedder calls are
    /// not language-model calls and are left out. `None` when no calls.
    pub fn guidance_fraction(&self) -> Option<f64> {
        let g = self.tier_total(Tier::Guidance);
        let total = g + self.tier_total(Tier::Execution);
        (total > 0).then(|| g as f64 / total as f64)
    }

    pub fn saturating_sub(&self, earlier: &CallCounts) -> CallCounts {
        let mut out = *self;
        for a in Agent::ALL {
            *out.slot(a) = self.get(a).saturating_sub(earlier.get(a));
        }
        out.embedder = self.embedder.saturating_sub(earlier.embedder);
        out
    }

    pub fn add(&mut self, other: &CallCounts) {
        for a in Agent::ALL {
            *self.slot(a) += other.get(a);
        }
        self.embedder += other.embedder;
    }
}

/// Lock-free call counters, safe to bump from parallel workers.
#[derive(Debug, Default)]
pub struct CallLedger {
    agents: [AtomicU64; 6],
    embedder: AtomicU64,
}

impl CallLedger {
    pub fn record(&self, agent: Agent) {
        self.agents[agent.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_embed(&self) {
        self.embedder.fetch_add(1, Ordering::Relaxed);
    }

    pub fn counts(&self) -> CallCounts {
        let mut c = CallCounts::default();
        for a in Agent::ALL {
            *c.slot(a) = self.agents[a.index()].load(Ordering::Relaxed);
        }
        c.embedder = self.embedder.load(Ordering::Relaxed);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// The guidance model, the execution model and the embedder, with call
/// accounting. Guidance-tier agents can only reach the guidance model and
/// execution-tier agents only the execution model.
#[derive(Clone)]
pub struct Backends {
    guidance: Arc<dyn LanguageModel>,
    execution: Arc<dyn LanguageModel>,
    embedder: Arc<dyn Embedder>,
    ledger: Arc<CallLedger>,
    retry: RetryPolicy,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("calls", &self.ledger.counts())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Backends {
    pub fn new(
        guidance: Arc<dyn LanguageModel>,
        execution: Arc<dyn LanguageModel>,
        embedder: Arc<dyn Embedder>,
    ) -> Self {
        Self {
            guidance,
            execution,
            embedder,
            ledger: Arc::new(CallLedger::default()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn calls(&self) -> CallCounts {
        self.ledger.counts()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let model = match request.agent.tier() {
            Tier::Guidance => &self.guidance,
            Tier::Execution => &self.execution,
        };
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 && !self.retry.base_delay.is_zero() {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            self.ledger.record(request.agent);
            match model.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

impl Embedder for Backends {
    fn dimension(&self) -> usize {
        self.embedder.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.ledger.record_embed();
        self.embedder.embed(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures_left: Mutex<u32>,
        error: BackendError,
    }

    impl LanguageModel for Flaky {
        fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(self.error.clone());
            }
            Ok("ok".into())
        }
    }

    struct NullEmbedder;
    impl Embedder for NullEmbedder {
        fn dimension(&self) -> usize {
            1
        }
        fn embed(&self, _: &str) -> Result<Vec<f64>, BackendError> {
            Ok(vec![1.0])
        }
    }

    fn backends(failures: u32, error: BackendError) -> Backends {
        let flaky = Arc::new(Flaky {
            failures_left: Mutex::new(failures),
            error,
        });
        Backends::new(flaky.clone(), flaky, Arc::new(NullEmbedder)).with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::ZERO,
        })
    }

    #[test]
    fn tier_table() {
        let guidance: Vec<_> = Agent::ALL
            .iter()
            .filter(|a| a.tier() == Tier::Guidance)
            .collect();
        assert_eq!(
            guidance,
            [&Agent::SkillDiscovery, &Agent::Navigator, &Agent::Critic, &Agent::Curator]
        );
        assert_eq!(Agent::Learner.tier(), Tier::Execution);
        assert_eq!(Agent::Explorer.tier(), Tier::Execution);
    }

    #[test]
    fn retries_are_counted() {
        let b = backends(2, BackendError::Unreachable("down".into()));
        let req = CompletionRequest::new(Agent::Critic, vec![ChatMessage::user("q")], 0.0);
        assert_eq!(b.complete(&req).unwrap(), "ok");
        assert_eq!(b.calls().critic, 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let b = backends(5, BackendError::Status {
            status: 503,
            body: String::new(),
        });
        let req = CompletionRequest::new(Agent::Learner, vec![ChatMessage::user("q")], 0.0);
        assert!(b.complete(&req).is_err());
        assert_eq!(b.calls().learner, 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let b = backends(5, BackendError::Rejected("bad".into()));
        let req = CompletionRequest::new(Agent::Learner, vec![ChatMessage::user("q")], 0.0);
        assert!(b.complete(&req).is_err());
        assert_eq!(b.calls().learner, 1);
    }

    #[test]
    fn guidance_fraction_excludes_embedder() {
        let c = CallCounts {
            navigator: 2,
            learner: 98,
            embedder: 500,
            ..Default::default()
        };
        assert!((c.guidance_fraction().unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(CallCounts::default().guidance_fraction(), None);
    }
}
