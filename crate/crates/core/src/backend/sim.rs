//! Deterministic simulated backends.
//!
//! The execution model answers a question correctly with probability
//! `clamp(base + 0.15 * min(matched, 3), 0, 0.98)`, where `base` is the
//! question's latent difficulty and `matched` counts prompt exemplars that
//! teach the same question pattern. The draw is keyed by `(seed, question)`,
//! so a fixed prompt always yields the same answer and a question that
//! becomes easier never flips from right to wrong.
//!
//! The guidance model fills templates from the error records it is shown.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Agent, BackendError, CompletionRequest, LanguageModel};
use crate::engine::prompts::{self, EvolveAction};
use crate::env::{strategy_pattern, QuestionBank};
use crate::ids::stable_hash;

pub const EXEMPLAR_GAIN: f64 = 0.15;
pub const MAX_MATCHED: usize = 3;
pub const MAX_SUCCESS_PROBABILITY: f64 = 0.98;
/// Latent difficulty for questions the bank does not know.
pub const UNKNOWN_BASE: f64 = 0.3;

pub fn success_probability(base: f64, matched: usize) -> f64 {
    (base + EXEMPLAR_GAIN * matched.min(MAX_MATCHED) as f64).clamp(0.0, MAX_SUCCESS_PROBABILITY)
}

/// Question and exemplar texts recovered from a learner prompt body.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct PromptExemplars {
    pub question: Option<String>,
    /// Questions of success exemplars and specific corrections.
    pub questions: Vec<String>,
    /// Patterns named by type-strategy corrections.
    pub strategy_patterns: Vec<String>,
}

pub fn parse_exemplars(body: &str) -> PromptExemplars {
    let mut out = PromptExemplars::default();
    let mut correction_kind: Option<bool> = None; // Some(true) = type strategy
    for line in body.lines() {
        if let Some(q) = line.strip_prefix("[QUESTION] ") {
            out.question = Some(q.trim().to_string());
            correction_kind = None;
        } else if line.starts_with("[SUCCESS ") {
            if let Some((_, q)) = line.split_once("] Q: ") {
                out.questions.push(q.trim().to_string());
            }
            correction_kind = None;
        } else if line.starts_with("[CORRECTION ") {
            correction_kind = Some(line.contains("kind=type_strategy"));
        } else if let Some(kind) = correction_kind {
            if let Some(q) = line.strip_prefix("question: ") {
                if !kind {
                    out.questions.push(q.trim().to_string());
                }
            } else if let Some(c) = line.strip_prefix("correction: ") {
                if kind {
                    if let Some(p) = strategy_pattern(c) {
                        out.strategy_patterns.push(p.to_string());
                    }
                }
            }
        }
    }
    out
}

/// Simulated Learner and Explorer.
pub struct SimulatedExecution {
    bank: Arc<QuestionBank>,
    seed: u64,
}

impl SimulatedExecution {
    pub fn new(bank: Arc<QuestionBank>, seed: u64) -> Self {
        Self { bank, seed }
    }

    /// Number of exemplars in `body` that teach the question's pattern.
    pub fn matched_exemplars(&self, body: &str) -> usize {
        let ex = parse_exemplars(body);
        let Some(pattern) = ex.question.as_deref().and_then(|q| self.bank.get(q)).map(|i| i.pattern.as_str()) else {
            return 0;
        };
        let from_questions = ex
            .questions
            .iter()
            .filter(|q| self.bank.get(q).is_some_and(|i| i.pattern == pattern))
            .count();
        let from_strategies = ex.strategy_patterns.iter().filter(|p| *p == pattern).count();
        from_questions + from_strategies
    }

    /// Probability that the learner answers the request's question
    /// correctly.
    pub fn success_probability(&self, request: &CompletionRequest) -> f64 {
        let body = request.user_text();
        let ex = parse_exemplars(body);
        let base = ex
            .question
            .as_deref()
            .and_then(|q| self.bank.get(q))
            .map_or(UNKNOWN_BASE, |i| i.difficulty);
        success_probability(base, self.matched_exemplars(body))
    }

    fn learner(&self, request: &CompletionRequest) -> String {
        let body = request.user_text();
        let question = parse_exemplars(body).question.unwrap_or_default();
        let info = self.bank.get(&question);
        let p = self.success_probability(request);
        let u: f64 = ChaCha8Rng::seed_from_u64(stable_hash(&[&self.seed.to_le_bytes(), b"learner", question.as_bytes()]))
            .random();
        let skill = prompts::field(request.system_text(), "skill").unwrap_or("general").to_string();
        let gold = info.map(|i| i.gold.clone()).unwrap_or_default();
        let answer = if u < p { gold.clone() } else { wrong_answer(&gold) };
        let mut lines = Vec::new();
        let steps: Vec<String> = match info {
            Some(i) if !i.steps.is_empty() => i.steps.clone(),
            _ => vec![skill],
        };
        let n = steps.len();
        for (k, s) in steps.iter().enumerate() {
            let what = if k + 1 == n {
                format!("combine the pieces into {answer}")
            } else {
                "extract the quantities this step needs".to_string()
            };
            lines.push(format!("Step {} [{s}]: {what}", k + 1));
        }
        lines.push(format!("Answer: {answer}"));
        lines.join("\n")
    }

    fn explorer(&self, request: &CompletionRequest) -> String {
        let user = request.user_text();
        let recipe = prompts::list_field(user, "recipe");
        let recent = prompts::list_field(user, "recent");
        let actions = prompts::list_field(user, "actions");
        let action = if !recipe.is_empty() {
            // Longest recipe prefix already played; continue from there.
            let m = (1..recipe.len())
                .rev()
                .find(|&m| recent.len() >= m && recent[recent.len() - m..] == recipe[..m])
                .unwrap_or(0);
            recipe[m].clone()
        } else if actions.is_empty() {
            "noop".to_string()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
                &self.seed.to_le_bytes(),
                b"explore",
                user.as_bytes(),
            ]));
            actions[rng.random_range(0..actions.len())].clone()
        };
        format!("action: {action}")
    }
}

fn wrong_answer(gold: &str) -> String {
    if let Ok(n) = gold.parse::<i64>() {
        return (n + 1).to_string();
    }
    match gold {
        "yes" => "no".into(),
        "no" => "yes".into(),
        _ => "unsure".into(),
    }
}

impl LanguageModel for SimulatedExecution {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        match request.agent {
            Agent::Learner => Ok(self.learner(request)),
            Agent::Explorer => Ok(self.explorer(request)),
            other => Err(BackendError::Rejected(format!(
                "execution backend cannot serve {other}"
            ))),
        }
    }
}

/// Simulated SkillDiscovery, Navigator, Critic and Curator.
pub struct SimulatedGuidance {
    bank: Arc<QuestionBank>,
}

impl SimulatedGuidance {
    pub fn new(bank: Arc<QuestionBank>) -> Self {
        Self { bank }
    }

    fn dominant_pattern(&self, errors: &[prompts::ErrorRecord], fallback: &str) -> String {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for e in errors {
            if let Some(info) = self.bank.get(&e.question) {
                match counts.iter_mut().find(|(p, _)| *p == info.pattern) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((info.pattern.clone(), 1)),
                }
            }
        }
        // First pattern with the highest count.
        let mut best: Option<(String, usize)> = None;
        for (p, c) in counts {
            if best.as_ref().map_or(true, |(_, b)| c > *b) {
                best = Some((p, c));
            }
        }
        best.map(|(p, _)| p).unwrap_or_else(|| fallback.to_string())
    }

    fn evolve(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let user = request.user_text();
        let action = prompts::field(user, "action")
            .and_then(EvolveAction::from_key)
            .ok_or_else(|| BackendError::Rejected("evolve request without a known action".into()))?;
        let task_type = prompts::field(user, "task_type").unwrap_or("unknown");
        let skill = prompts::field(user, "skill").unwrap_or("unknown");
        let errors = prompts::parse_errors(user);
        let pattern = self.dominant_pattern(&errors, task_type);
        let words = pattern.replace(['_', ':'], " ");
        Ok(match action {
            EvolveAction::FailureMemories => {
                let mut lines: Vec<String> = errors
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        format!(
                            "correction {}: The answer {} is wrong; apply {skill} to each stated quantity in order, which gives {}.",
                            i + 1,
                            e.predicted,
                            e.gold
                        )
                    })
                    .collect();
                lines.push(format!(
                    "strategy: [Question type: {pattern}] Recognise {words} questions of {task_type}. How to solve: restate what is asked, apply {skill} step by step, then check the result against the question."
                ));
                lines.join("\n")
            }
            EvolveAction::Principle => {
                format!("principle: For {words} questions, apply {skill} to every stated quantity before combining them.")
            }
            EvolveAction::PromptRefinement => format!(
                "template: Solve using {skill}. Watch for {words} questions and verify each intermediate value."
            ),
            EvolveAction::ToolAuthoring => format!(
                "tool_name: check_{}\ndescription: Recomputes the final value of {words} questions from the stated quantities.",
                pattern.replace(':', "_")
            ),
            EvolveAction::SkillSplit => format!("split: {skill}__{}", pattern.replace(':', "_")),
        })
    }
}

impl LanguageModel for SimulatedGuidance {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let user = request.user_text();
        match request.agent {
            Agent::Critic => {
                let gold = prompts::field(user, "gold").unwrap_or_default();
                let predicted = prompts::field(user, "predicted").unwrap_or_default();
                Ok(if prompts::exact_match(predicted, gold) {
                    "CORRECT".into()
                } else {
                    "INCORRECT".into()
                })
            }
            Agent::Navigator => {
                let mut listed = prompts::navigator_listing(user);
                listed.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
                let names: Vec<_> = listed.into_iter().map(|(n, _)| n).collect();
                Ok(format!("order: {}", names.join(", ")))
            }
            Agent::SkillDiscovery | Agent::Curator => self.evolve(request),
            other => Err(BackendError::Rejected(format!("guidance backend cannot serve {other}"))),
        }
    }
}

/// Wraps a model and makes every call after the first `healthy` calls fail
/// as unreachable. For exercising halt-and-resume paths.
pub struct FailAfter<M> {
    inner: M,
    healthy: u64,
    seen: AtomicU64,
}

impl<M> FailAfter<M> {
    pub fn new(inner: M, healthy: u64) -> Self {
        Self {
            inner,
            healthy,
            seen: AtomicU64::new(0),
        }
    }
}

impl<M: LanguageModel> LanguageModel for FailAfter<M> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if self.seen.fetch_add(1, Ordering::SeqCst) >= self.healthy {
            return Err(BackendError::Unreachable("simulated outage".into()));
        }
        self.inner.complete(request)
    }
}
