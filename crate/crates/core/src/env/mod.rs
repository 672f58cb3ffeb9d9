//! Synthetic environments: a static QA benchmark and a toy sequential
//! chain world.
//!
//! Both are fully determined by `(mode, seed)`, which is all that a run
//! directory stores (`env.json`).

mod sequential;
mod static_qa;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sequential::{ChainWorld, Episode, EpisodeStep, ACHIEVEMENTS};

use crate::graph::{ExperiencePayload, FailureKind};
use crate::ids::stable_hash;

/// Per-pattern training questions generated up front.
pub const TRAIN_PER_PATTERN: usize = 60;
/// Per-pattern held-out questions (disjoint from training).
pub const HELD_OUT_PER_PATTERN: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("evolution pool of {requested} questions requested at iteration {iter}, only {available} available")]
    Exhausted {
        iter: i64,
        requested: usize,
        available: usize,
    },
    #[error("unknown environment mode {0:?} (expected static_qa or sequential)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    StaticQa,
    Sequential,
}

impl std::str::FromStr for EnvMode {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static_qa" | "static" => Ok(EnvMode::StaticQa),
            "sequential" => Ok(EnvMode::Sequential),
            other => Err(EnvError::UnknownMode(other.to_string())),
        }
    }
}

/// What a run directory records about its environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub mode: EnvMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDecl {
    pub name: String,
    pub prerequisites: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDecl {
    pub name: String,
    pub resolver: String,
    /// First iteration at which questions of this type enter the pool.
    pub unlock_iter: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub context: String,
    pub task_type: String,
    pub gold: String,
}

/// Hidden per-question facts the simulated backends consult. The engine
/// never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionInfo {
    pub task_type: String,
    pub pattern: String,
    pub gold: String,
    pub difficulty: f64,
    pub steps: Vec<String>,
}

#[derive(Debug, Default)]
pub struct QuestionBank {
    by_text: HashMap<String, QuestionInfo>,
    seed: u64,
}

impl QuestionBank {
    pub fn get(&self, text: &str) -> Option<&QuestionInfo> {
        self.by_text.get(text.trim())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.by_text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_text.is_empty()
    }

    /// Question pattern a stored memory teaches, if any.
    pub fn memory_pattern<'a>(&'a self, payload: &'a ExperiencePayload) -> Option<&'a str> {
        match payload {
            ExperiencePayload::SuccessMemory(s) => self.get(&s.question).map(|i| i.pattern.as_str()),
            ExperiencePayload::FailureMemory(f) => match f.kind {
                FailureKind::Specific => self.get(&f.question).map(|i| i.pattern.as_str()),
                FailureKind::TypeStrategy => strategy_pattern(&f.corrective_reasoning),
            },
            _ => None,
        }
    }

    fn insert(&mut self, text: String, info: QuestionInfo) {
        self.by_text.insert(text, info);
    }
}

/// Extracts `p` from a correction that starts with `[Question type: p]`.
pub fn strategy_pattern(correction: &str) -> Option<&str> {
    let rest = correction.trim_start().strip_prefix("[Question type:")?;
    let end = rest.find(']')?;
    let p = rest[..end].trim();
    (!p.is_empty()).then_some(p)
}

pub struct SyntheticEnv {
    spec: EnvSpec,
    skills: Vec<SkillDecl>,
    task_types: Vec<TaskDecl>,
    train: BTreeMap<String, Vec<Question>>,
    held_out: Vec<Question>,
    bank: Arc<QuestionBank>,
    world: Option<ChainWorld>,
}

impl SyntheticEnv {
    pub fn new(spec: EnvSpec) -> Self {
        match spec.mode {
            EnvMode::StaticQa => Self::static_qa(spec.seed),
            EnvMode::Sequential => Self::sequential(spec.seed),
        }
    }

    pub fn static_qa(seed: u64) -> Self {
        let mut bank = QuestionBank {
            seed,
            ..Default::default()
        };
        let mut train: BTreeMap<String, Vec<Question>> = BTreeMap::new();
        let mut held_out = Vec::new();
        for p in static_qa::patterns() {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&seed.to_le_bytes(), p.name.as_bytes()]));
            let mut made = 0usize;
            let mut attempts = 0usize;
            let wanted = TRAIN_PER_PATTERN + HELD_OUT_PER_PATTERN;
            while made < wanted && attempts < wanted * 50 {
                attempts += 1;
                let g = (p.generate)(&mut rng);
                if bank.get(&g.text).is_some() {
                    continue;
                }
                let jitter = (stable_hash(&[&seed.to_le_bytes(), g.text.as_bytes()]) % 1001) as f64 / 1000.0;
                bank.insert(
                    g.text.clone(),
                    QuestionInfo {
                        task_type: p.task_type.to_string(),
                        pattern: p.name.to_string(),
                        gold: g.gold.clone(),
                        difficulty: (p.difficulty + 0.1 * (jitter - 0.5)).clamp(0.0, 1.0),
                        steps: g.steps,
                    },
                );
                let q = Question {
                    text: g.text,
                    context: g.context,
                    task_type: p.task_type.to_string(),
                    gold: g.gold,
                };
                if made < TRAIN_PER_PATTERN {
                    train.entry(p.task_type.to_string()).or_default().push(q);
                } else {
                    held_out.push(q);
                }
                made += 1;
            }
        }
        Self {
            spec: EnvSpec {
                mode: EnvMode::StaticQa,
                seed,
            },
            skills: static_qa::skills(),
            task_types: static_qa::task_types(),
            train,
            held_out,
            bank: Arc::new(bank),
            world: None,
        }
    }

    pub fn sequential(seed: u64) -> Self {
        let world = ChainWorld::new(seed);
        let mut bank = QuestionBank {
            seed,
            ..Default::default()
        };
        let mut train: BTreeMap<String, Vec<Question>> = BTreeMap::new();
        let mut held_out = Vec::new();
        for g in sequential::questions(seed) {
            bank.insert(
                g.question.text.clone(),
                QuestionInfo {
                    task_type: g.question.task_type.clone(),
                    pattern: g.pattern.clone(),
                    gold: g.question.gold.clone(),
                    difficulty: g.difficulty,
                    steps: Vec::new(),
                },
            );
            if g.held_out {
                held_out.push(g.question);
            } else {
                train.entry(g.question.task_type.clone()).or_default().push(g.question);
            }
        }
        Self {
            spec: EnvSpec {
                mode: EnvMode::Sequential,
                seed,
            },
            skills: sequential::skills(),
            task_types: sequential::task_types(),
            train,
            held_out,
            bank: Arc::new(bank),
            world: Some(world),
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn is_sequential(&self) -> bool {
        self.spec.mode == EnvMode::Sequential
    }

    pub fn skills(&self) -> &[SkillDecl] {
        &self.skills
    }

    pub fn task_types(&self) -> &[TaskDecl] {
        &self.task_types
    }

    pub fn bank(&self) -> Arc<QuestionBank> {
        Arc::clone(&self.bank)
    }

    pub fn world(&self) -> Option<&ChainWorld> {
        self.world.as_ref()
    }

    pub fn held_out(&self) -> &[Question] {
        &self.held_out
    }

    /// Task types whose questions may appear at iteration `iter`.
    pub fn unlocked(&self, iter: i64) -> BTreeSet<&str> {
        self.task_types
            .iter()
            .filter(|t| t.unlock_iter <= iter)
            .map(|t| t.name.as_str())
            .collect()
    }

    /// Draws `size` distinct training questions from the unlocked types.
    /// The draw depends only on `(seed, iter)`.
    pub fn evolution_pool(&self, iter: i64, size: usize) -> Result<Vec<Question>, EnvError> {
        let unlocked = self.unlocked(iter);
        let mut candidates: Vec<&Question> = self
            .train
            .iter()
            .filter(|(t, _)| unlocked.contains(t.as_str()))
            .flat_map(|(_, qs)| qs.iter())
            .collect();
        if candidates.len() < size {
            return Err(EnvError::Exhausted {
                iter,
                requested: size,
                available: candidates.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
            &self.spec.seed.to_le_bytes(),
            b"pool",
            &iter.to_le_bytes(),
        ]));
        candidates.shuffle(&mut rng);
        Ok(candidates.into_iter().take(size).cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FailurePayload;

    #[test]
    fn generation_is_deterministic_under_seed() {
        let a = SyntheticEnv::static_qa(7);
        let b = SyntheticEnv::static_qa(7);
        assert_eq!(a.evolution_pool(3, 200).unwrap(), b.evolution_pool(3, 200).unwrap());
        assert_eq!(a.held_out(), b.held_out());
        let c = SyntheticEnv::static_qa(8);
        assert_ne!(a.evolution_pool(3, 200).unwrap(), c.evolution_pool(3, 200).unwrap());
    }

    #[test]
    fn every_question_names_a_declared_task_type() {
        for env in [SyntheticEnv::static_qa(1), SyntheticEnv::sequential(1)] {
            let declared: BTreeSet<_> = env.task_types().iter().map(|t| t.name.clone()).collect();
            let pool = env.evolution_pool(20, 200).unwrap();
            for q in pool.iter().chain(env.held_out()) {
                assert!(declared.contains(&q.task_type), "{}", q.task_type);
                let info = env.bank().get(&q.text).cloned().unwrap();
                assert_eq!(info.gold, q.gold);
                assert_eq!(info.task_type, q.task_type);
            }
        }
    }

    #[test]
    fn static_env_shape() {
        let env = SyntheticEnv::static_qa(0);
        assert_eq!(env.skills().len(), 8);
        assert_eq!(env.task_types().len(), 6);
        let held: BTreeSet<_> = env.held_out().iter().map(|q| &q.text).collect();
        let pool = env.evolution_pool(19, 200).unwrap();
        assert!(pool.iter().all(|q| !held.contains(&q.text)));
        let distinct: BTreeSet<_> = pool.iter().map(|q| &q.text).collect();
        assert_eq!(distinct.len(), 200);
        assert!(env.held_out().iter().any(|q| q.context.chars().count() >= 500));
        assert!(env.held_out().iter().any(|q| q.context.is_empty()));
    }

    #[test]
    fn early_pool_only_draws_unlocked_types() {
        let env = SyntheticEnv::static_qa(0);
        let unlocked = env.unlocked(0);
        assert!(env.evolution_pool(0, 150).unwrap().iter().all(|q| unlocked.contains(q.task_type.as_str())));
    }

    #[test]
    fn oversized_pool_is_exhaustion() {
        let env = SyntheticEnv::static_qa(0);
        assert!(matches!(env.evolution_pool(0, 100_000), Err(EnvError::Exhausted { .. })));
    }

    #[test]
    fn strategy_pattern_parsing() {
        assert_eq!(strategy_pattern("[Question type: share_split] Recognise it"), Some("share_split"));
        assert_eq!(strategy_pattern("no prefix"), None);
        let bank = QuestionBank::default();
        let p = ExperiencePayload::FailureMemory(FailurePayload {
            question: "q".into(),
            wrong_answer: "1".into(),
            corrective_reasoning: "[Question type: x] y".into(),
            correct_answer: "2".into(),
            kind: FailureKind::TypeStrategy,
        });
        assert_eq!(bank.memory_pattern(&p), Some("x"));
    }
}
