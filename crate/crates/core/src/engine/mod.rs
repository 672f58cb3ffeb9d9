//! The iteration loop: PLAN, EXPLORE, EVALUATE, UPDATE, EVOLVE, guard.
//!
//! One [`Engine`] owns the graph, the derived memory index and the
//! backends. `run_iteration` is the only training entry point; frozen
//! evaluation goes through `&self` methods and cannot write.

pub mod audit;
pub mod critic;
pub mod guard;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{call_audit, CallAudit, EmptyAudit};
pub use critic::{critic_evaluate, skill_success_rates, Judged};
pub use guard::{delta_guard, Rollback};
use prompts::{ErrorRecord, EvolveAction, LearnerContext};

use crate::backend::sim::{SimulatedExecution, SimulatedGuidance};
use crate::backend::{BackendError, Backends, CallCounts, CompletionRequest, Embedder};
use crate::bandit::BanditKind;
use crate::config::{ConfigError, EngineConfig};
use crate::curriculum::{learnable_frontier, mastery_update, round_robin_select, CurriculumError, TaskStat};
use crate::env::{EnvError, Question, SyntheticEnv, ACHIEVEMENTS};
use crate::graph::{
    EnvClass, ExperienceNode, ExperiencePayload, FailureKind, FailurePayload, GraphError, KnowledgeGraph, NewExperience,
    Outcome, PatternPayload, PrinciplePayload, RecipeKind, RecipePayload,
};
use crate::ids::{stable_hash, NodeId};
use crate::memory::{
    self, action_recipe, cascade_principles, curriculum_override, format_bundle, record_action_recipe,
    render_skill_lattice, Harvest, HashEmbedder, MemoryBundle, MemoryError, MemoryIndex,
};

/// EVOLVE rotation, indexed by `iter mod 4`.
pub const ROTATION: [EvolveAction; 4] = [
    EvolveAction::Principle,
    EvolveAction::PromptRefinement,
    EvolveAction::ToolAuthoring,
    EvolveAction::SkillSplit,
];

/// Search-bandit arm that switches on the cascade prompt extensions.
pub const CASCADE_ARM: &str = "cascade";

pub fn rotation_action(iter: i64) -> EvolveAction {
    ROTATION[iter.rem_euclid(ROTATION.len() as i64) as usize]
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("iteration {iter} halted: {source}")]
    Backend {
        iter: i64,
        source: BackendError,
        partial: Box<IterationReport>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid engine input: {0}")]
    Validation(String),
}

/// Injected faults for exercising the guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Report the iteration's accuracy as `previous - drop`.
    AccuracyDrop { iter: i64, drop: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question: String,
    pub task_type: String,
    pub skill: Option<String>,
    pub routing_arm: String,
    pub search_arm: String,
    pub predicted: Option<String>,
    pub reward: u8,
    pub judge_failed: bool,
    pub retrieved: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppendedIds {
    pub principle: Vec<NodeId>,
    pub failure_memory: Vec<NodeId>,
    pub success_memory: Vec<NodeId>,
    pub retrieval_recipe: Vec<NodeId>,
    pub abstracted_pattern: Vec<NodeId>,
    pub skills: Vec<NodeId>,
    pub environment: Vec<NodeId>,
}

impl AppendedIds {
    fn push(&mut self, outcome: Outcome, id: NodeId) {
        match outcome {
            Outcome::Principle => self.principle.push(id),
            Outcome::FailureMemory => self.failure_memory.push(id),
            Outcome::SuccessMemory => self.success_memory.push(id),
            Outcome::RetrievalRecipe => self.retrieval_recipe.push(id),
            Outcome::AbstractedPattern => self.abstracted_pattern.push(id),
        }
    }

    pub fn experience_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.principle
            .iter()
            .chain(&self.failure_memory)
            .chain(&self.success_memory)
            .chain(&self.retrieval_recipe)
            .chain(&self.abstracted_pattern)
            .copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub focus: String,
    pub actions: Vec<String>,
    pub achieved: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: i64,
    pub selected_frontier: Vec<String>,
    pub selected_task_types: Vec<String>,
    pub evolve_action: String,
    pub scores: Vec<QuestionScore>,
    pub accuracy: f64,
    pub measured_accuracy: f64,
    pub appended: AppendedIds,
    /// Abstracted patterns removed by this iteration's prune.
    pub pruned: Vec<NodeId>,
    pub rollback: Rollback,
    pub calls: CallCounts,
    pub masteries: BTreeMap<String, f64>,
    pub explore: Option<ExploreSummary>,
    pub evolve_errors: Vec<String>,
}

/// Result of a frozen evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub use_memory: bool,
    pub calls: CallCounts,
    pub guidance_fraction: f64,
    pub digest_before: String,
    pub digest_after: String,
}

/// Memory source for read-only prompt rendering.
pub enum Retriever<'a> {
    /// No exemplars.
    Disabled,
    /// Embedding similarity with format-conditional allocation.
    Embedding,
    /// Top-K candidates by the supplied gain.
    Oracle(&'a (dyn Fn(&Question, &ExperienceNode) -> f64 + Sync)),
}

struct Planned<'q> {
    question: &'q Question,
    task_type: NodeId,
    skill: Option<NodeId>,
    routing_arm: String,
    search_arm: String,
}

struct Answered {
    score: QuestionScore,
    trace: String,
    steps: Vec<crate::graph::DecompositionStep>,
}

pub struct Engine {
    config: EngineConfig,
    env: Arc<SyntheticEnv>,
    backends: Backends,
    graph: KnowledgeGraph,
    index: MemoryIndex,
    prev_accuracy: Option<f64>,
    faults: Vec<Fault>,
    harvested: HashSet<String>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("iter", &self.graph.current_iter())
            .field("prev_accuracy", &self.prev_accuracy)
            .finish_non_exhaustive()
    }
}

/// Simulated guidance, execution and embedder backends for `env`.
pub fn simulated_backends(env: &SyntheticEnv, config: &EngineConfig) -> Backends {
    let bank = env.bank();
    Backends::new(
        Arc::new(SimulatedGuidance::new(bank.clone())),
        Arc::new(SimulatedExecution::new(bank, config.seed)),
        Arc::new(HashEmbedder::new(config.embedding_dimension, config.seed)),
    )
}

/// Phase-0 ontology: the environment's declared skills, prerequisite edges
/// and task types, written before the first iteration.
pub fn seed_ontology(graph: &mut KnowledgeGraph, env: &SyntheticEnv) -> Result<(), GraphError> {
    let mut ids = BTreeMap::new();
    for s in env.skills() {
        ids.insert(s.name.clone(), graph.add_skill(&s.name, 0.0)?);
    }
    for s in env.skills() {
        for p in &s.prerequisites {
            let from = *ids
                .get(p)
                .ok_or_else(|| GraphError::Validation(format!("unknown prerequisite {p}")))?;
            graph.add_prerequisite(from, ids[&s.name])?;
        }
    }
    for t in env.task_types() {
        graph.add_task_type(&t.name, ids.get(&t.resolver).copied())?;
    }
    Ok(())
}

impl Engine {
    /// Fresh engine with the ontology seeded.
    pub fn new(config: EngineConfig, env: Arc<SyntheticEnv>, backends: Backends) -> Result<Self, EngineError> {
        config.validate()?;
        let mut graph = KnowledgeGraph::new(config.graph_limits());
        seed_ontology(&mut graph, &env)?;
        Self::from_graph(config, env, backends, graph, None)
    }

    /// Engine over simulated backends.
    pub fn simulated(config: EngineConfig, env: Arc<SyntheticEnv>) -> Result<Self, EngineError> {
        let backends = simulated_backends(&env, &config);
        Self::new(config, env, backends)
    }

    /// Resumes from an existing graph (for example one rebuilt by replay).
    pub fn from_graph(
        config: EngineConfig,
        env: Arc<SyntheticEnv>,
        backends: Backends,
        graph: KnowledgeGraph,
        prev_accuracy: Option<f64>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if backends.dimension() != config.embedding_dimension {
            return Err(EngineError::Validation(format!(
                "embedder dimension {} does not match embedding_dimension {}",
                backends.dimension(),
                config.embedding_dimension
            )));
        }
        let index = MemoryIndex::build(&graph, backends.embedder(), config.parallelism())?;
        let harvested = successes(&graph);
        Ok(Self {
            config,
            env,
            backends,
            graph,
            index,
            prev_accuracy,
            faults: Vec::new(),
            harvested,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn env(&self) -> &SyntheticEnv {
        &self.env
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn index(&self) -> &MemoryIndex {
        &self.index
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn prev_accuracy(&self) -> Option<f64> {
        self.prev_accuracy
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.faults.push(fault);
    }

    /// Makes the graph and bandits read-only for good.
    pub fn freeze(&mut self) {
        self.graph.freeze();
    }

    pub fn into_graph(self) -> KnowledgeGraph {
        self.graph
    }

    // ---- training ------------------------------------------------------

    pub fn run_iteration(&mut self) -> Result<IterationReport, EngineError> {
        let iter = self.graph.current_iter() + 1;
        let calls_before = self.backends.calls();
        let mut report = IterationReport {
            iter,
            evolve_action: rotation_action(iter).key().to_string(),
            ..Default::default()
        };
        let halt = |source: BackendError, report: &IterationReport, calls: CallCounts| EngineError::Backend {
            iter,
            source,
            partial: Box::new(IterationReport {
                calls,
                ..report.clone()
            }),
        };

        self.graph.begin_iteration(iter)?;
        let snapshot = self.graph.snapshot()?;
        let pool = self.env.evolution_pool(iter, self.config.evaluation_pool_per_iteration)?;

        // PLAN
        match self.plan() {
            Ok(frontier) => report.selected_frontier = frontier,
            Err(e) => return Err(halt(e, &report, self.calls_since(&calls_before))),
        }

        // EXPLORE
        if self.env.is_sequential() {
            match self.explore(iter, &mut report) {
                Ok(summary) => report.explore = Some(summary),
                Err(EngineError::Backend { source, .. }) => {
                    return Err(halt(source, &report, self.calls_since(&calls_before)))
                }
                Err(e) => return Err(e),
            }
        }

        // EVALUATE
        let planned = self.plan_questions(&pool)?;
        let answered = self.answer_all(&planned, true, self.config.train_temperature);
        let mut results = Vec::with_capacity(answered.len());
        for a in answered {
            match a {
                Ok(a) => results.push(a),
                Err(EngineError::Backend { source, .. }) => {
                    report.scores = results.into_iter().map(|a: Answered| a.score).collect();
                    return Err(halt(source, &report, self.calls_since(&calls_before)));
                }
                Err(e) => return Err(e),
            }
        }

        // UPDATE
        self.update(&planned, &results, &mut report)?;
        report.scores = results.iter().map(|a| a.score.clone()).collect();
        let measured = if report.scores.is_empty() {
            0.0
        } else {
            report.scores.iter().map(|s| f64::from(s.reward)).sum::<f64>() / report.scores.len() as f64
        };

        // EVOLVE
        if let Err(e) = self.evolve(iter, &planned, &results, &mut report) {
            return match e {
                EngineError::Backend { source, .. } => Err(halt(source, &report, self.calls_since(&calls_before))),
                other => Err(other),
            };
        }

        // guard
        let mut accuracy = if self.config.guard_remeasure {
            let again = self.answer_all(&planned, true, self.config.train_temperature);
            let mut ok = 0usize;
            for a in &again {
                match a {
                    Ok(a) => ok += usize::from(a.score.reward),
                    Err(EngineError::Backend { source, .. }) => {
                        return Err(halt(source.clone(), &report, self.calls_since(&calls_before)))
                    }
                    Err(e) => return Err(EngineError::Validation(e.to_string())),
                }
            }
            ok as f64 / again.len().max(1) as f64
        } else {
            measured
        };
        for f in &self.faults {
            let Fault::AccuracyDrop { iter: at, drop } = *f;
            if at == iter {
                accuracy = (self.prev_accuracy.unwrap_or(measured) - drop).clamp(0.0, 1.0);
            }
        }
        report.measured_accuracy = measured;
        report.accuracy = accuracy;
        if let Some(prev) = self.prev_accuracy {
            report.rollback = delta_guard(
                prev,
                accuracy,
                self.config.per_iter_delta_guard,
                self.config.catastrophic_rollback_threshold,
            );
            if report.rollback.rolled_back() {
                self.graph.rollback_mutable(snapshot)?;
            }
        }
        self.prev_accuracy = Some(accuracy);

        self.graph.end_iteration()?;
        if (iter + 1) % self.config.memory_refresh_gap as i64 == 0 {
            self.index = MemoryIndex::build(&self.graph, self.backends.embedder(), self.config.parallelism())?;
        }
        report.masteries = self.graph.skills().map(|s| (s.name.clone(), s.mastery)).collect();
        report.calls = self.calls_since(&calls_before);
        Ok(report)
    }

    fn calls_since(&self, before: &CallCounts) -> CallCounts {
        self.backends.calls().saturating_sub(before)
    }

    /// Frontier from the graph, reordered or subset by the Navigator.
    fn plan(&mut self) -> Result<Vec<String>, BackendError> {
        let masteries = self.graph.masteries();
        let frontier = learnable_frontier(&self.graph.skill_dag(), &masteries, self.config.theta).unwrap_or_default();
        let listed: Vec<(String, f64)> = frontier
            .iter()
            .filter_map(|id| self.graph.skill(*id).map(|s| (s.name.clone(), s.mastery)))
            .collect();
        if listed.is_empty() {
            return Ok(Vec::new());
        }
        let reply = self
            .backends
            .complete(&prompts::navigator_request(&listed, self.config.train_temperature))?;
        let names: Vec<String> = listed.iter().map(|(n, _)| n.clone()).collect();
        let refined = prompts::parse_navigator_reply(&reply, &names);
        Ok(if refined.is_empty() { names } else { refined })
    }

    fn explore(&mut self, iter: i64, report: &mut IterationReport) -> Result<ExploreSummary, EngineError> {
        let world = self.env.world().cloned().expect("sequential env has a world");
        let mut episode = world.new_episode();
        let mut summary = ExploreSummary::default();
        for step in 0..world.episode_len {
            let Some(goal) = episode.next_goal() else {
                break;
            };
            let goal_name = ACHIEVEMENTS[goal].0;
            let requested = self
                .graph
                .skill_by_name(goal_name)
                .map(|s| s.id)
                .ok_or_else(|| EngineError::Validation(format!("no skill for achievement {goal_name}")))?;
            let focus_id = curriculum_override(&self.graph, requested, self.config.theta);
            let focus = self.graph.skill(focus_id).map(|s| s.name.clone()).unwrap_or_default();
            if step == 0 {
                summary.focus = focus.clone();
            }
            let recipe = action_recipe(&self.graph, requested);
            let recent = episode.recent_actions(3);
            let view = prompts::ExplorerView {
                goal: goal_name,
                focus: &focus,
                actions: world.actions(),
                recent: &recent,
                recipe: &recipe,
                episode: iter,
                step,
            };
            let reply = self
                .backends
                .complete(&prompts::explorer_request(&view, self.config.train_temperature))
                .map_err(|source| EngineError::Backend {
                    iter,
                    source,
                    partial: Box::default(),
                })?;
            let action = prompts::parse_explorer_reply(&reply).unwrap_or_else(|| "noop".into());
            if let Some(done) = episode.step(&action) {
                let trailing = episode.recent_actions(3);
                if action_recipe(&self.graph, requested) != trailing {
                    let id = record_action_recipe(&mut self.graph, requested, &trailing)?;
                    report.appended.push(Outcome::RetrievalRecipe, id);
                }
                summary.achieved.push(ACHIEVEMENTS[done].0.to_string());
            }
        }
        summary.actions = episode.steps.iter().map(|s| s.action.clone()).collect();

        let known: BTreeSet<String> = self.graph.environment().map(|n| n.payload.clone()).collect();
        let obs = format!(
            "episode {iter}: reached {}/{} ({})",
            episode.achieved,
            ACHIEVEMENTS.len(),
            summary.achieved.join(", ")
        );
        report.appended.environment.push(self.graph.add_env_node(EnvClass::Observation, &obs)?);
        let mut prev: Option<&str> = None;
        for name in &summary.achieved {
            if !known.contains(name) {
                report.appended.environment.push(self.graph.add_env_node(EnvClass::Entity, name)?);
            }
            if let Some(p) = prev {
                let rel = format!("{p} -> {name}");
                if !known.contains(&rel) {
                    report.appended.environment.push(self.graph.add_env_node(EnvClass::Relation, &rel)?);
                }
            }
            prev = Some(name);
        }
        let id = self.graph.append_experience(NewExperience {
            task_type: None,
            skill: None,
            confidence: episode.fraction_achieved(),
            payload: ExperiencePayload::AbstractedPattern(PatternPayload {
                summary: format!(
                    "chain progress {}/{}: {}",
                    episode.achieved,
                    ACHIEVEMENTS.len(),
                    if summary.achieved.is_empty() {
                        "nothing unlocked".to_string()
                    } else {
                        summary.achieved.join(" -> ")
                    }
                ),
            }),
        })?;
        report.appended.push(Outcome::AbstractedPattern, id);
        Ok(summary)
    }

    /// Observes task types and draws bandit arms, serially in pool order.
    fn plan_questions<'q>(&mut self, pool: &'q [Question]) -> Result<Vec<Planned<'q>>, EngineError> {
        let mut planned = Vec::with_capacity(pool.len());
        for q in pool {
            let t = self
                .graph
                .task_type_by_name(&q.task_type)
                .ok_or_else(|| EngineError::Validation(format!("question names unknown task type {}", q.task_type)))?;
            let (task_type, skill) = (t.id, t.resolver_skill);
            self.graph.observe_task_type(task_type)?;
            let search_arm = self.draw_arm(BanditKind::Search, task_type)?;
            let routing_arm = match skill {
                Some(s) => self.draw_arm(BanditKind::Routing, s)?,
                None => self.config.routing_arms[0].clone(),
            };
            planned.push(Planned {
                question: q,
                task_type,
                skill,
                routing_arm,
                search_arm,
            });
        }
        Ok(planned)
    }

    fn draw_arm(&mut self, kind: BanditKind, context: NodeId) -> Result<String, EngineError> {
        if self.graph.bandit(kind, context).is_none() {
            let (arms, tag): (&[String], &[u8]) = match kind {
                BanditKind::Routing => (&self.config.routing_arms, b"routing"),
                BanditKind::Search => (&self.config.search_arms, b"search"),
            };
            let seed = stable_hash(&[&self.config.seed.to_le_bytes(), tag, &context.0.to_le_bytes()]);
            let arms = arms.to_vec();
            self.graph
                .register_bandit(kind, context, &arms, self.config.search_bandit_warmup_pulls_per_arm, seed)?;
        }
        Ok(self.graph.bandit_select(kind, context)?)
    }

    /// Learner (and, when `judge`, Critic) calls for every planned question.
    /// Reads only; safe to fan out.
    fn answer_all(&self, planned: &[Planned<'_>], judge: bool, temperature: f64) -> Vec<Result<Answered, EngineError>> {
        self.config.parallelism().map(planned, |p| self.answer_one(p, judge, temperature))
    }

    fn answer_one(&self, p: &Planned<'_>, judge: bool, temperature: f64) -> Result<Answered, EngineError> {
        let backend = |source| EngineError::Backend {
            iter: self.graph.current_iter(),
            source,
            partial: Box::default(),
        };
        let (request, bundle) = self.render(p.question, p.task_type, p.skill, &p.routing_arm, &p.search_arm, &Retriever::Embedding, temperature)?;
        let reply = self.backends.complete(&request).map_err(backend)?;
        let parsed = prompts::parse_learner_reply(&reply);
        let judged = if judge {
            critic::judge_answer(&self.backends, &p.question.text, parsed.answer.as_deref(), &p.question.gold, temperature)
                .map_err(backend)?
        } else {
            Judged {
                reward: u8::from(parsed.answer.as_deref().is_some_and(|a| prompts::exact_match(a, &p.question.gold))),
                judge_failed: false,
            }
        };
        Ok(Answered {
            score: QuestionScore {
                question: p.question.text.clone(),
                task_type: p.question.task_type.clone(),
                skill: p.skill.and_then(|s| self.graph.skill(s)).map(|s| s.name.clone()),
                routing_arm: p.routing_arm.clone(),
                search_arm: p.search_arm.clone(),
                predicted: parsed.answer,
                reward: judged.reward,
                judge_failed: judged.judge_failed,
                retrieved: bundle.node_ids(),
            },
            trace: parsed.trace,
            steps: parsed.steps,
        })
    }

    /// Builds the learner request for one question.
    #[allow(clippy::too_many_arguments)]
    fn render(
        &self,
        question: &Question,
        task_type: NodeId,
        skill: Option<NodeId>,
        routing_arm: &str,
        search_arm: &str,
        retriever: &Retriever<'_>,
        temperature: f64,
    ) -> Result<(CompletionRequest, MemoryBundle), EngineError> {
        let params = self.config.retrieval_params();
        let bundle = match retriever {
            Retriever::Disabled => MemoryBundle::empty(),
            Retriever::Embedding => {
                let v = self.backends.embed(&question.text).map_err(MemoryError::from)?;
                self.index
                    .retrieve_bundle(&v, task_type, question.context.chars().count(), &params)?
            }
            Retriever::Oracle(gain) => {
                let v = self.backends.embed(&question.text).map_err(MemoryError::from)?;
                self.index.oracle_bundle(&v, task_type, params.top_k(), |id| {
                    self.graph.experience(id).map_or(0.0, |n| gain(question, n))
                })?
            }
        };
        let cascade = search_arm == CASCADE_ARM;
        let lattice = cascade.then(|| render_skill_lattice(&self.graph, task_type, self.config.lattice_depth_cap));
        let lattice = lattice.filter(|l| !l.is_empty());
        let body = format_bundle(&self.graph, &bundle, &question.text, &question.context, lattice.as_deref())?;
        let skill_node = skill.and_then(|s| self.graph.skill(s));
        let principle_ids = match (skill, cascade) {
            (Some(s), true) => cascade_principles(&self.graph, s)?,
            (Some(_), false) => skill_node.map(|s| s.principle_ids.clone()).unwrap_or_default(),
            (None, _) => Vec::new(),
        };
        let principles: Vec<String> = principle_ids
            .iter()
            .filter_map(|id| match self.graph.experience(*id).map(|n| &n.payload) {
                Some(ExperiencePayload::Principle(p)) => Some(p.text.clone()),
                _ => None,
            })
            .collect();
        let ctx = LearnerContext {
            skill: skill_node.map_or("general", |s| s.name.as_str()),
            strategy: routing_arm,
            template: skill_node.map_or("", |s| s.prompt_template.as_str()),
            principles: &principles,
        };
        Ok((prompts::learner_request(&ctx, &body, temperature), bundle))
    }

    /// Harvests, bandit updates, failure counters, mastery ratchet, prune.
    /// Applied serially in pool order.
    fn update(&mut self, planned: &[Planned<'_>], results: &[Answered], report: &mut IterationReport) -> Result<(), EngineError> {
        let mut failures: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (p, a) in planned.iter().zip(results) {
            let reward = a.score.reward;
            if reward == 1 {
                if self.harvested.insert(p.question.text.clone()) {
                    let id = memory::harvest_success(
                        &mut self.graph,
                        &mut self.index,
                        &self.backends,
                        Harvest {
                            question: p.question.text.clone(),
                            reasoning_trace: a.trace.clone(),
                            answer: a.score.predicted.clone().unwrap_or_default(),
                            decomposition: a.steps.clone(),
                            task_type: p.task_type,
                            skill: p.skill,
                        },
                        self.config.trace_char_cap,
                    )?;
                    report.appended.push(Outcome::SuccessMemory, id);
                }
            } else {
                *failures.entry(p.task_type).or_default() += 1;
            }
            self.graph.bandit_update(BanditKind::Search, p.task_type, &p.search_arm, reward)?;
            if let Some(s) = p.skill {
                self.graph.bandit_update(BanditKind::Routing, s, &p.routing_arm, reward)?;
            }
        }
        for (t, n) in failures {
            self.graph.record_failures(t, n)?;
        }
        let outcomes: Vec<_> = planned.iter().zip(results).map(|(p, a)| (p.skill, a.score.reward)).collect();
        let ratchet = self.config.ratchet_params();
        for (skill, e) in skill_success_rates(&outcomes) {
            let prev = self.graph.skill(skill).map(|s| s.mastery).unwrap_or(0.0);
            self.graph.set_mastery(skill, mastery_update(prev, e, &ratchet)?)?;
        }
        report.pruned = self.graph.prune_low_confidence(self.config.prune_threshold)?;
        let pruned: BTreeSet<_> = report.pruned.iter().copied().collect();
        report.appended.abstracted_pattern.retain(|id| !pruned.contains(id));
        Ok(())
    }

    fn evolve(
        &mut self,
        iter: i64,
        planned: &[Planned<'_>],
        results: &[Answered],
        report: &mut IterationReport,
    ) -> Result<(), EngineError> {
        let stats: Vec<TaskStat> = self
            .graph
            .task_types()
            .filter(|t| t.observed())
            .map(|t| TaskStat {
                id: t.id,
                n_fail: t.n_fail,
                k_last: t.k_last,
            })
            .collect();
        let selected = round_robin_select(&stats, iter, &self.config.selector_params())?;
        let action = rotation_action(iter);
        for t in &selected {
            self.graph.mark_selected(*t)?;
        }
        for t in selected {
            let node = self.graph.task_type(t).cloned().expect("selected type exists");
            report.selected_task_types.push(node.name.clone());
            let errors: Vec<ErrorRecord> = planned
                .iter()
                .zip(results)
                .filter(|(p, a)| p.task_type == t && a.score.reward == 0)
                .map(|(p, a)| ErrorRecord {
                    question: p.question.text.clone(),
                    predicted: a.score.predicted.clone().unwrap_or_default(),
                    gold: p.question.gold.clone(),
                })
                .collect();
            let Some(skill) = node.resolver_skill else {
                report.evolve_errors.push(format!("task type {} has no resolver skill", node.name));
                continue;
            };
            if !errors.is_empty() {
                let shown = &errors[..errors.len().min(self.config.failure_memories_per_type.max(1))];
                self.author_failure_memories(&node.name, t, skill, shown, report)?;
            }
            self.apply_rotation(action, &node.name, t, skill, &errors, report)?;
        }
        Ok(())
    }

    fn ask(&self, action: EvolveAction, task_type: &str, skill: NodeId, errors: &[ErrorRecord]) -> Result<String, EngineError> {
        let s = self.graph.skill(skill).expect("resolver exists");
        let req = prompts::evolve_request(action, task_type, &s.name, &s.prompt_template, errors, self.config.train_temperature);
        self.backends.complete(&req).map_err(|source| EngineError::Backend {
            iter: self.graph.current_iter(),
            source,
            partial: Box::default(),
        })
    }

    fn append_indexed(&mut self, new: NewExperience, report: &mut IterationReport) -> Result<NodeId, EngineError> {
        let outcome = new.payload.outcome();
        let id = self.graph.append_experience(new)?;
        if matches!(outcome, Outcome::SuccessMemory | Outcome::FailureMemory) {
            let node = self.graph.experience(id).expect("just appended").clone();
            self.index.index_with(&node, &self.backends)?;
        }
        report.appended.push(outcome, id);
        Ok(id)
    }

    fn author_failure_memories(
        &mut self,
        task_name: &str,
        task_type: NodeId,
        skill: NodeId,
        errors: &[ErrorRecord],
        report: &mut IterationReport,
    ) -> Result<(), EngineError> {
        let reply = self.ask(EvolveAction::FailureMemories, task_name, skill, errors)?;
        let corrections = prompts::numbered_fields(&reply, "correction");
        for (i, e) in errors.iter().enumerate() {
            let Some((_, text)) = corrections.iter().find(|(n, _)| *n == i + 1) else {
                report.evolve_errors.push(format!("no correction {} for {task_name}", i + 1));
                continue;
            };
            self.append_indexed(
                NewExperience {
                    task_type: Some(task_type),
                    skill: Some(skill),
                    confidence: 1.0,
                    payload: ExperiencePayload::FailureMemory(FailurePayload {
                        question: e.question.clone(),
                        wrong_answer: e.predicted.clone(),
                        corrective_reasoning: text.to_string(),
                        correct_answer: e.gold.clone(),
                        kind: FailureKind::Specific,
                    }),
                },
                report,
            )?;
        }
        // A single error is not enough to name a pattern.
        if errors.len() < 2 {
            return Ok(());
        }
        match prompts::field(&reply, "strategy").filter(|s| !s.is_empty()) {
            Some(strategy) => {
                let text = if strategy.starts_with("[Question type:") {
                    strategy.to_string()
                } else {
                    format!("[Question type: {task_name}] {strategy}")
                };
                let first = &errors[0];
                self.append_indexed(
                    NewExperience {
                        task_type: Some(task_type),
                        skill: Some(skill),
                        confidence: 1.0,
                        payload: ExperiencePayload::FailureMemory(FailurePayload {
                            question: first.question.clone(),
                            wrong_answer: first.predicted.clone(),
                            corrective_reasoning: text,
                            correct_answer: first.gold.clone(),
                            kind: FailureKind::TypeStrategy,
                        }),
                    },
                    report,
                )?;
            }
            None => report.evolve_errors.push(format!("no strategy line for {task_name}")),
        }
        Ok(())
    }

    fn apply_rotation(
        &mut self,
        action: EvolveAction,
        task_name: &str,
        task_type: NodeId,
        skill: NodeId,
        errors: &[ErrorRecord],
        report: &mut IterationReport,
    ) -> Result<(), EngineError> {
        let shown = &errors[..errors.len().min(self.config.failure_memories_per_type.max(1))];
        let reply = self.ask(action, task_name, skill, shown)?;
        let missing = |key: &str| format!("{} reply for {task_name} has no `{key}` line", action.key());
        match action {
            EvolveAction::Principle => match prompts::field(&reply, "principle").filter(|s| !s.is_empty()) {
                Some(text) => {
                    let id = self.append_indexed(
                        NewExperience {
                            task_type: Some(task_type),
                            skill: Some(skill),
                            confidence: 1.0,
                            payload: ExperiencePayload::Principle(PrinciplePayload { text: text.to_string() }),
                        },
                        report,
                    )?;
                    self.graph.attach_principle(skill, id)?;
                }
                None => report.evolve_errors.push(missing("principle")),
            },
            EvolveAction::PromptRefinement => match prompts::field(&reply, "template").filter(|s| !s.is_empty()) {
                Some(text) => self.graph.set_prompt_template(skill, text)?,
                None => report.evolve_errors.push(missing("template")),
            },
            EvolveAction::ToolAuthoring => {
                match (prompts::field(&reply, "tool_name"), prompts::field(&reply, "description")) {
                    (Some(name), Some(desc)) if !name.is_empty() => {
                        self.append_indexed(
                            NewExperience {
                                task_type: Some(task_type),
                                skill: Some(skill),
                                confidence: 1.0,
                                payload: ExperiencePayload::RetrievalRecipe(RecipePayload {
                                    kind: RecipeKind::Tool,
                                    name: name.to_string(),
                                    description: desc.to_string(),
                                    actions: Vec::new(),
                                }),
                            },
                            report,
                        )?;
                    }
                    _ => report.evolve_errors.push(missing("tool_name")),
                }
            }
            EvolveAction::SkillSplit => match prompts::field(&reply, "split").filter(|s| !s.is_empty()) {
                Some(name) if self.graph.skill_by_name(name).is_some() => {}
                Some(name) => match self.graph.add_skill(name, 0.0) {
                    Ok(id) => {
                        self.graph.add_prerequisite(skill, id)?;
                        report.appended.skills.push(id);
                    }
                    Err(e @ GraphError::SkillCap { .. }) => report.evolve_errors.push(e.to_string()),
                    Err(e) => return Err(e.into()),
                },
                None => report.evolve_errors.push(missing("split")),
            },
            EvolveAction::FailureMemories => unreachable!("not part of the rotation"),
        }
        Ok(())
    }

    // ---- read-only paths ---------------------------------------------------

    /// Greedy arm of a registered bandit, or the first configured arm.
    fn greedy(&self, kind: BanditKind, context: Option<NodeId>) -> String {
        let arms = match kind {
            BanditKind::Routing => &self.config.routing_arms,
            BanditKind::Search => &self.config.search_arms,
        };
        context
            .and_then(|c| self.graph.bandit(kind, c))
            .and_then(|b| b.greedy_arm().ok().map(str::to_string))
            .unwrap_or_else(|| arms[0].clone())
    }

    /// Learner request for `question` against the current graph with greedy
    /// arms. Writes nothing.
    pub fn learner_request_for(&self, question: &Question, retriever: &Retriever<'_>) -> Result<CompletionRequest, EngineError> {
        let t = self
            .graph
            .task_type_by_name(&question.task_type)
            .ok_or_else(|| EngineError::Validation(format!("unknown task type {}", question.task_type)))?;
        let routing = self.greedy(BanditKind::Routing, t.resolver_skill);
        let search = self.greedy(BanditKind::Search, Some(t.id));
        let (req, _) = self.render(
            question,
            t.id,
            t.resolver_skill,
            &routing,
            &search,
            retriever,
            self.config.eval_temperature,
        )?;
        Ok(req)
    }

    /// Answers `questions` through retrieval only and scores them locally
    /// by exact match. No guidance-tier calls, no graph writes.
    pub fn evaluate_frozen(&self, questions: &[Question], use_memory: bool) -> Result<EvalReport, EngineError> {
        if questions.is_empty() {
            return Err(EngineError::Validation("evaluation pool is empty".into()));
        }
        let digest_before = self.graph.state().digest();
        let before = self.backends.calls();
        let retriever = if use_memory { Retriever::Embedding } else { Retriever::Disabled };
        let results = self.config.parallelism().map(questions, |q| -> Result<bool, EngineError> {
            let req = self.learner_request_for(q, &retriever)?;
            let reply = self.backends.complete(&req).map_err(|source| EngineError::Backend {
                iter: self.graph.current_iter(),
                source,
                partial: Box::default(),
            })?;
            let answer = prompts::parse_learner_reply(&reply).answer;
            Ok(answer.is_some_and(|a| prompts::exact_match(&a, &q.gold)))
        });
        let mut correct = 0;
        for r in results {
            correct += usize::from(r?);
        }
        let calls = self.calls_since(&before);
        Ok(EvalReport {
            questions: questions.len(),
            correct,
            accuracy: correct as f64 / questions.len() as f64,
            use_memory,
            guidance_fraction: calls.guidance_fraction().unwrap_or(0.0),
            calls,
            digest_before,
            digest_after: self.graph.state().digest(),
        })
    }
}

fn successes(graph: &KnowledgeGraph) -> HashSet<String> {
    graph
        .experiences()
        .filter_map(|n| match &n.payload {
            ExperiencePayload::SuccessMemory(s) => Some(s.question.clone()),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests;
