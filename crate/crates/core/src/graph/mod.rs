//! The four-subgraph knowledge graph.
//!
//! - capability subgraph: [`SkillNode`]s joined by prerequisite edges (kept
//!   acyclic);
//! - task subgraph: [`TaskTypeNode`]s with failure/selection counters and a
//!   resolver skill;
//! - experience subgraph: [`ExperienceNode`]s discriminated by [`Outcome`];
//!   principles, failure memories and success memories are protected;
//! - environment subgraph: thin [`EnvNode`] store.
//!
//! All writes go through one `&mut` owner and are recorded as [`Event`]s.
//! Reads take `&self`, so any number of concurrent readers see a consistent
//! state while no write is in progress.

pub mod dag;
pub mod event;
pub mod types;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dag::{CycleError, SkillDag};
pub use event::{Event, EventRecord, LogError, SnapshotId};
pub use types::*;

use crate::bandit::{BanditError, BanditKind, BanditState};
use crate::ids::NodeId;

pub const DEFAULT_PRINCIPLE_CAP: usize = 12;
pub const DEFAULT_SKILL_CAP: usize = 30;
pub const DEFAULT_SNAPSHOT_LIMIT: usize = 64;
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: NodeId },
    #[error("snapshot {0} not found")]
    SnapshotNotFound(SnapshotId),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("skill growth cap of {cap} reached")]
    SkillCap { cap: usize },
    #[error("graph is frozen; write rejected")]
    Frozen,
    #[error("protected node {0} cannot be removed or modified")]
    Protected(NodeId),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("replay diverged at seq {seq}: {reason}")]
    Replay { seq: u64, reason: String },
}

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphLimits {
    pub principle_cap: usize,
    pub skill_cap: usize,
    pub snapshot_limit: usize,
}

impl Default for GraphLimits {
    fn default() -> Self {
        Self {
            principle_cap: DEFAULT_PRINCIPLE_CAP,
            skill_cap: DEFAULT_SKILL_CAP,
            snapshot_limit: DEFAULT_SNAPSHOT_LIMIT,
        }
    }
}

/// Everything that replay must reproduce bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    pub next_id: u64,
    pub iter: i64,
    pub skills: BTreeMap<NodeId, SkillNode>,
    pub task_types: BTreeMap<NodeId, TaskTypeNode>,
    pub prerequisites: BTreeSet<(NodeId, NodeId)>,
    pub experience: BTreeMap<NodeId, ExperienceNode>,
    pub environment: BTreeMap<NodeId, EnvNode>,
    pub bandits: BanditBook,
}

impl Default for GraphState {
    fn default() -> Self {
        Self {
            next_id: 0,
            iter: -1,
            skills: BTreeMap::new(),
            task_types: BTreeMap::new(),
            prerequisites: BTreeSet::new(),
            experience: BTreeMap::new(),
            environment: BTreeMap::new(),
            bandits: BanditBook::default(),
        }
    }
}

impl GraphState {
    pub fn protected_counts(&self) -> ProtectedCounts {
        let mut counts = ProtectedCounts::default();
        for node in self.experience.values() {
            counts.bump(node.outcome());
        }
        counts
    }

    /// Canonical JSON encoding; equal states encode to equal bytes.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph state serializes")
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("graph state serializes");
        let d = Sha256::digest(&bytes);
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSlots {
    pub mastery: f64,
    pub prompt_template: String,
    pub strategy: String,
}

/// State restored by a rollback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutableSlots {
    pub skills: BTreeMap<NodeId, SkillSlots>,
    pub bandits: BanditBook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub snapshot_id: SnapshotId,
    pub iteration: i64,
    pub mutable_state: MutableSlots,
    pub protected_watermark: ProtectedCounts,
}

/// The knowledge graph plus its event log and snapshot history.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    state: GraphState,
    limits: GraphLimits,
    snapshots: VecDeque<Snapshot>,
    next_snapshot: SnapshotId,
    log: Vec<EventRecord>,
    frozen: bool,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new(GraphLimits::default())
    }
}

impl KnowledgeGraph {
    pub fn new(limits: GraphLimits) -> Self {
        Self {
            state: GraphState::default(),
            limits,
            snapshots: VecDeque::new(),
            next_snapshot: 0,
            log: Vec::new(),
            frozen: false,
        }
    }

    /// Rebuilds a graph from an event log. Every record is re-validated; a
    /// record that does not apply cleanly aborts with [`GraphError::Replay`].
    pub fn replay(limits: GraphLimits, records: &[EventRecord]) -> Result<Self, GraphError> {
        let mut g = KnowledgeGraph::new(limits);
        for r in records {
            if r.seq != g.log.len() as u64 {
                return Err(GraphError::Replay {
                    seq: r.seq,
                    reason: format!("expected seq {}", g.log.len()),
                });
            }
            g.commit(r.event.clone()).map_err(|e| GraphError::Replay {
                seq: r.seq,
                reason: e.to_string(),
            })?;
            if g.state.iter != r.iter {
                return Err(GraphError::Replay {
                    seq: r.seq,
                    reason: format!("record iter {} but graph at {}", r.iter, g.state.iter),
                });
            }
        }
        Ok(g)
    }

    // ---- reads ---------------------------------------------------------

    pub fn state(&self) -> &GraphState {
        &self.state
    }

    pub fn limits(&self) -> GraphLimits {
        self.limits
    }

    pub fn current_iter(&self) -> i64 {
        self.state.iter
    }

    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn skill(&self, id: NodeId) -> Option<&SkillNode> {
        self.state.skills.get(&id)
    }

    pub fn skills(&self) -> impl Iterator<Item = &SkillNode> {
        self.state.skills.values()
    }

    pub fn skill_by_name(&self, name: &str) -> Option<&SkillNode> {
        self.state.skills.values().find(|s| s.name == name)
    }

    pub fn task_type(&self, id: NodeId) -> Option<&TaskTypeNode> {
        self.state.task_types.get(&id)
    }

    pub fn task_types(&self) -> impl Iterator<Item = &TaskTypeNode> {
        self.state.task_types.values()
    }

    pub fn task_type_by_name(&self, name: &str) -> Option<&TaskTypeNode> {
        self.state.task_types.values().find(|t| t.name == name)
    }

    pub fn experience(&self, id: NodeId) -> Option<&ExperienceNode> {
        self.state.experience.get(&id)
    }

    pub fn experiences(&self) -> impl Iterator<Item = &ExperienceNode> {
        self.state.experience.values()
    }

    pub fn environment(&self) -> impl Iterator<Item = &EnvNode> {
        self.state.environment.values()
    }

    pub fn bandit(&self, kind: BanditKind, context: NodeId) -> Option<&BanditState> {
        self.state.bandits.get(kind, context)
    }

    pub fn protected_counts(&self) -> ProtectedCounts {
        self.state.protected_counts()
    }

    pub fn masteries(&self) -> BTreeMap<NodeId, f64> {
        self.state
            .skills
            .iter()
            .map(|(id, s)| (*id, s.mastery))
            .collect()
    }

    pub fn skill_dag(&self) -> SkillDag {
        SkillDag::from_edges(
            self.state.skills.keys().copied(),
            self.state.prerequisites.iter().copied(),
        )
    }

    pub fn snapshot_ids(&self) -> impl Iterator<Item = SnapshotId> + '_ {
        self.snapshots.iter().map(|s| s.snapshot_id)
    }

    pub fn get_snapshot(&self, id: SnapshotId) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.snapshot_id == id)
    }

    pub fn mutable_slots(&self) -> MutableSlots {
        MutableSlots {
            skills: self
                .state
                .skills
                .iter()
                .map(|(id, s)| {
                    (
                        *id,
                        SkillSlots {
                            mastery: s.mastery,
                            prompt_template: s.prompt_template.clone(),
                            strategy: s.strategy.clone(),
                        },
                    )
                })
                .collect(),
            bandits: self.state.bandits.clone(),
        }
    }

    // ---- writes --------------------------------------------------------

    /// Puts the graph in read-only mode. Every later write fails with
    /// [`GraphError::Frozen`].
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn begin_iteration(&mut self, iter: i64) -> Result<(), GraphError> {
        self.commit(Event::BeginIteration { iter })
    }

    pub fn end_iteration(&mut self) -> Result<(), GraphError> {
        let iter = self.state.iter;
        self.commit(Event::EndIteration { iter })
    }

    pub fn add_skill(&mut self, name: &str, mastery: f64) -> Result<NodeId, GraphError> {
        let id = NodeId(self.state.next_id);
        self.commit(Event::AddSkill {
            id,
            name: name.to_string(),
            mastery,
            prompt_template: format!("Solve using {name}."),
            strategy: String::new(),
        })?;
        Ok(id)
    }

    pub fn add_task_type(&mut self, name: &str, resolver: Option<NodeId>) -> Result<NodeId, GraphError> {
        let id = NodeId(self.state.next_id);
        self.commit(Event::AddTaskType {
            id,
            name: name.to_string(),
            resolver,
        })?;
        Ok(id)
    }

    /// Adds `from` as a prerequisite of `to`. Rejected, with the graph
    /// unchanged, when the edge would close a cycle.
    pub fn add_prerequisite(&mut self, from: NodeId, to: NodeId) -> Result<(), GraphError> {
        self.commit(Event::AddPrerequisite { from, to })
    }

    /// Records the first sighting of a task type; later calls are no-ops.
    pub fn observe_task_type(&mut self, task_type: NodeId) -> Result<bool, GraphError> {
        let t = self
            .task_type(task_type)
            .ok_or(GraphError::NotFound { what: "task type", id: task_type })?;
        if t.observed() {
            return Ok(false);
        }
        self.commit(Event::ObserveTaskType { task_type })?;
        Ok(true)
    }

    pub fn append_experience(&mut self, new: NewExperience) -> Result<NodeId, GraphError> {
        let id = NodeId(self.state.next_id);
        let node = ExperienceNode {
            id,
            task_type: new.task_type,
            skill: new.skill,
            confidence: new.confidence,
            created_iter: self.state.iter,
            payload: new.payload,
        };
        self.commit(Event::AppendExperience { node })?;
        Ok(id)
    }

    pub fn add_env_node(&mut self, class: EnvClass, payload: &str) -> Result<NodeId, GraphError> {
        let id = NodeId(self.state.next_id);
        self.commit(Event::AddEnvNode {
            node: EnvNode {
                id,
                class,
                payload: payload.to_string(),
            },
        })?;
        Ok(id)
    }

    /// Deletes abstracted-pattern nodes whose confidence is below
    /// `threshold`. Every other outcome class is exempt.
    pub fn prune_low_confidence(&mut self, threshold: f64) -> Result<Vec<NodeId>, GraphError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(invalid(format!("prune threshold {threshold} outside [0,1]")));
        }
        let removed: Vec<NodeId> = self
            .state
            .experience
            .values()
            .filter(|n| n.outcome() == Outcome::AbstractedPattern && n.confidence < threshold)
            .map(|n| n.id)
            .collect();
        self.commit(Event::Prune {
            threshold,
            removed: removed.clone(),
        })?;
        Ok(removed)
    }

    pub fn set_mastery(&mut self, skill: NodeId, value: f64) -> Result<(), GraphError> {
        self.commit(Event::SetMastery { skill, value })
    }

    pub fn set_prompt_template(&mut self, skill: NodeId, text: &str) -> Result<(), GraphError> {
        self.commit(Event::SetPromptTemplate {
            skill,
            text: text.to_string(),
        })
    }

    pub fn set_strategy(&mut self, skill: NodeId, text: &str) -> Result<(), GraphError> {
        self.commit(Event::SetStrategy {
            skill,
            text: text.to_string(),
        })
    }

    /// Adds a principle reference to a skill. At the cap the oldest reference
    /// is dropped from the skill's list; the principle node itself stays in
    /// the experience subgraph. Returns the evicted reference, if any.
    pub fn attach_principle(&mut self, skill: NodeId, principle: NodeId) -> Result<Option<NodeId>, GraphError> {
        let s = self
            .skill(skill)
            .ok_or(GraphError::NotFound { what: "skill", id: skill })?;
        let evicted = if s.principle_ids.len() >= self.limits.principle_cap {
            s.principle_ids.first().copied()
        } else {
            None
        };
        self.commit(Event::AttachPrinciple {
            skill,
            principle,
            evicted,
        })?;
        Ok(evicted)
    }

    pub fn record_failures(&mut self, task_type: NodeId, count: u64) -> Result<(), GraphError> {
        if count == 0 {
            return Ok(());
        }
        self.commit(Event::RecordFailures { task_type, count })
    }

    /// Sets `k_last` of a task type to the current iteration.
    pub fn mark_selected(&mut self, task_type: NodeId) -> Result<(), GraphError> {
        self.commit(Event::MarkSelected { task_type })
    }

    pub fn register_bandit(
        &mut self,
        kind: BanditKind,
        context: NodeId,
        arms: &[String],
        warmup: u64,
        seed: u64,
    ) -> Result<(), GraphError> {
        self.commit(Event::RegisterBandit {
            kind,
            context,
            arms: arms.to_vec(),
            warmup,
            seed,
        })
    }

    pub fn bandit_select(&mut self, kind: BanditKind, context: NodeId) -> Result<String, GraphError> {
        let mut probe = self
            .bandit(kind, context)
            .ok_or(GraphError::NotFound { what: "bandit context", id: context })?
            .clone();
        let arm = probe.select_arm()?.to_string();
        self.commit(Event::BanditSelect {
            kind,
            context,
            arm: arm.clone(),
        })?;
        Ok(arm)
    }

    pub fn bandit_update(&mut self, kind: BanditKind, context: NodeId, arm: &str, reward: u8) -> Result<(), GraphError> {
        self.commit(Event::BanditUpdate {
            kind,
            context,
            arm: arm.to_string(),
            reward,
        })
    }

    pub fn snapshot(&mut self) -> Result<SnapshotId, GraphError> {
        let id = self.next_snapshot;
        self.commit(Event::Snapshot { snapshot_id: id })?;
        Ok(id)
    }

    /// Restores masteries, prompt templates, strategies and bandit states to
    /// their values at `snapshot_id`. Experience nodes, including protected
    /// ones appended after the snapshot, are untouched.
    pub fn rollback_mutable(&mut self, snapshot_id: SnapshotId) -> Result<(), GraphError> {
        self.commit(Event::Rollback { snapshot_id })
    }

    // ---- event application ----------------------------------------------

    fn commit(&mut self, event: Event) -> Result<(), GraphError> {
        if self.frozen {
            return Err(GraphError::Frozen);
        }
        self.apply(&event)?;
        self.log.push(EventRecord {
            seq: self.log.len() as u64,
            iter: self.state.iter,
            event,
        });
        Ok(())
    }

    fn expect_fresh_id(&self, id: NodeId) -> Result<(), GraphError> {
        if id.0 != self.state.next_id {
            return Err(invalid(format!(
                "node id {id} out of order (next is n{})",
                self.state.next_id
            )));
        }
        Ok(())
    }

    fn skill_mut(&mut self, id: NodeId) -> Result<&mut SkillNode, GraphError> {
        self.state
            .skills
            .get_mut(&id)
            .ok_or(GraphError::NotFound { what: "skill", id })
    }

    fn task_type_mut(&mut self, id: NodeId) -> Result<&mut TaskTypeNode, GraphError> {
        self.state
            .task_types
            .get_mut(&id)
            .ok_or(GraphError::NotFound { what: "task type", id })
    }

    fn validate_experience(&self, node: &ExperienceNode) -> Result<(), GraphError> {
        if !(0.0..=1.0).contains(&node.confidence) {
            return Err(invalid(format!("confidence {} outside [0,1]", node.confidence)));
        }
        if node.created_iter != self.state.iter {
            return Err(invalid("created_iter must equal the current iteration"));
        }
        if let Some(t) = node.task_type {
            if !self.state.task_types.contains_key(&t) {
                return Err(GraphError::NotFound { what: "task type", id: t });
            }
        }
        if let Some(s) = node.skill {
            if !self.state.skills.contains_key(&s) {
                return Err(GraphError::NotFound { what: "skill", id: s });
            }
        }
        match &node.payload {
            ExperiencePayload::Principle(p) if p.text.trim().is_empty() => {
                Err(invalid("principle text is empty"))
            }
            ExperiencePayload::FailureMemory(_) | ExperiencePayload::SuccessMemory(_)
                if node.task_type.is_none() =>
            {
                Err(invalid("worked-example memories must carry a task type"))
            }
            ExperiencePayload::FailureMemory(f)
                if f.kind == FailureKind::TypeStrategy && f.corrective_reasoning.trim().is_empty() =>
            {
                Err(invalid("type-strategy memory must name its question pattern"))
            }
            ExperiencePayload::RetrievalRecipe(r)
                if r.kind == RecipeKind::ActionSequence && r.actions.is_empty() =>
            {
                Err(invalid("action recipe is empty"))
            }
            _ => Ok(()),
        }
    }

    fn apply(&mut self, event: &Event) -> Result<(), GraphError> {
        match event {
            Event::BeginIteration { iter } => {
                if *iter <= self.state.iter {
                    return Err(invalid(format!(
                        "iteration {iter} does not advance past {}",
                        self.state.iter
                    )));
                }
                self.state.iter = *iter;
            }
            Event::EndIteration { iter } => {
                if *iter != self.state.iter {
                    return Err(invalid(format!("ending iteration {iter} while in {}", self.state.iter)));
                }
            }
            Event::AddSkill {
                id,
                name,
                mastery,
                prompt_template,
                strategy,
            } => {
                self.expect_fresh_id(*id)?;
                if self.state.skills.len() >= self.limits.skill_cap {
                    return Err(GraphError::SkillCap {
                        cap: self.limits.skill_cap,
                    });
                }
                if name.trim().is_empty() {
                    return Err(invalid("skill name is empty"));
                }
                if self.skill_by_name(name).is_some() {
                    return Err(invalid(format!("duplicate skill name `{name}`")));
                }
                check_unit(*mastery, "mastery")?;
                self.state.skills.insert(
                    *id,
                    SkillNode {
                        id: *id,
                        name: name.clone(),
                        mastery: *mastery,
                        prompt_template: prompt_template.clone(),
                        strategy: strategy.clone(),
                        principle_ids: Vec::new(),
                    },
                );
                self.state.next_id += 1;
            }
            Event::AddTaskType { id, name, resolver } => {
                self.expect_fresh_id(*id)?;
                if self.task_type_by_name(name).is_some() {
                    return Err(invalid(format!("duplicate task type `{name}`")));
                }
                if let Some(r) = resolver {
                    if !self.state.skills.contains_key(r) {
                        return Err(GraphError::NotFound { what: "skill", id: *r });
                    }
                }
                self.state.task_types.insert(
                    *id,
                    TaskTypeNode {
                        id: *id,
                        name: name.clone(),
                        n_fail: 0,
                        k_last: -1,
                        resolver_skill: *resolver,
                        first_seen: None,
                    },
                );
                self.state.next_id += 1;
            }
            Event::AddPrerequisite { from, to } => {
                for id in [from, to] {
                    if !self.state.skills.contains_key(id) {
                        return Err(GraphError::NotFound { what: "skill", id: *id });
                    }
                }
                if self.skill_dag().would_create_cycle(*from, *to) {
                    return Err(CycleError(*from).into());
                }
                self.state.prerequisites.insert((*from, *to));
            }
            Event::ObserveTaskType { task_type } => {
                let iter = self.state.iter;
                let t = self.task_type_mut(*task_type)?;
                if t.first_seen.is_some() {
                    return Err(invalid(format!("task type {task_type} already observed")));
                }
                t.first_seen = Some(iter);
            }
            Event::AppendExperience { node } => {
                self.expect_fresh_id(node.id)?;
                self.validate_experience(node)?;
                self.state.experience.insert(node.id, node.clone());
                self.state.next_id += 1;
            }
            Event::AddEnvNode { node } => {
                self.expect_fresh_id(node.id)?;
                self.state.environment.insert(node.id, node.clone());
                self.state.next_id += 1;
            }
            Event::Prune { threshold, removed } => {
                // Check everything before touching state so a bad record
                // leaves the graph unchanged.
                for id in removed {
                    let node = self
                        .experience(*id)
                        .ok_or(GraphError::NotFound { what: "experience node", id: *id })?;
                    if node.outcome() != Outcome::AbstractedPattern {
                        return Err(GraphError::Protected(*id));
                    }
                    if node.confidence >= *threshold {
                        return Err(invalid(format!(
                            "node {id} has confidence {} >= threshold {threshold}",
                            node.confidence
                        )));
                    }
                }
                for id in removed {
                    self.state.experience.remove(id);
                }
            }
            Event::SetMastery { skill, value } => {
                check_unit(*value, "mastery")?;
                self.skill_mut(*skill)?.mastery = *value;
            }
            Event::SetPromptTemplate { skill, text } => {
                self.skill_mut(*skill)?.prompt_template = text.clone();
            }
            Event::SetStrategy { skill, text } => {
                self.skill_mut(*skill)?.strategy = text.clone();
            }
            Event::AttachPrinciple {
                skill,
                principle,
                evicted,
            } => {
                match self.experience(*principle) {
                    Some(n) if n.outcome() == Outcome::Principle => {}
                    Some(_) => return Err(invalid(format!("{principle} is not a principle node"))),
                    None => {
                        return Err(GraphError::NotFound {
                            what: "principle",
                            id: *principle,
                        })
                    }
                }
                let cap = self.limits.principle_cap;
                let s = self.skill_mut(*skill)?;
                let expected = if s.principle_ids.len() >= cap {
                    s.principle_ids.first().copied()
                } else {
                    None
                };
                if expected != *evicted {
                    return Err(invalid("principle eviction does not match the cap rule"));
                }
                if evicted.is_some() {
                    s.principle_ids.remove(0);
                }
                s.principle_ids.push(*principle);
            }
            Event::RecordFailures { task_type, count } => {
                if *count == 0 {
                    return Err(invalid("failure count increment must be positive"));
                }
                self.task_type_mut(*task_type)?.n_fail += count;
            }
            Event::MarkSelected { task_type } => {
                let iter = self.state.iter;
                if iter < 0 {
                    return Err(invalid("selection outside an iteration"));
                }
                self.task_type_mut(*task_type)?.k_last = iter;
            }
            Event::RegisterBandit {
                kind,
                context,
                arms,
                warmup,
                seed,
            } => {
                let exists = match kind {
                    BanditKind::Routing => self.state.skills.contains_key(context),
                    BanditKind::Search => self.state.task_types.contains_key(context),
                };
                if !exists {
                    return Err(GraphError::NotFound {
                        what: "bandit context",
                        id: *context,
                    });
                }
                if self.state.bandits.get(*kind, *context).is_some() {
                    return Err(invalid(format!("bandit already registered for {context}")));
                }
                let state = BanditState::new(arms, *warmup, *seed)?;
                self.state.bandits.map_mut(*kind).insert(*context, state);
            }
            Event::BanditSelect { kind, context, arm } => {
                let b = self
                    .state
                    .bandits
                    .get_mut(*kind, *context)
                    .ok_or(GraphError::NotFound {
                        what: "bandit context",
                        id: *context,
                    })?;
                let mut trial = b.clone();
                let chosen = trial.select_arm()?;
                if chosen != arm {
                    return Err(invalid(format!("bandit selected `{chosen}`, record says `{arm}`")));
                }
                *b = trial;
            }
            Event::BanditUpdate {
                kind,
                context,
                arm,
                reward,
            } => {
                let b = self
                    .state
                    .bandits
                    .get_mut(*kind, *context)
                    .ok_or(GraphError::NotFound {
                        what: "bandit context",
                        id: *context,
                    })?;
                b.update_arm(arm, *reward)?;
            }
            Event::Snapshot { snapshot_id } => {
                if *snapshot_id != self.next_snapshot {
                    return Err(invalid(format!(
                        "snapshot id {snapshot_id} out of order (next is {})",
                        self.next_snapshot
                    )));
                }
                let snap = Snapshot {
                    snapshot_id: *snapshot_id,
                    iteration: self.state.iter,
                    mutable_state: self.mutable_slots(),
                    protected_watermark: self.protected_counts(),
                };
                self.snapshots.push_back(snap);
                while self.snapshots.len() > self.limits.snapshot_limit {
                    self.snapshots.pop_front();
                }
                self.next_snapshot += 1;
            }
            Event::Rollback { snapshot_id } => {
                let snap = self
                    .get_snapshot(*snapshot_id)
                    .ok_or(GraphError::SnapshotNotFound(*snapshot_id))?
                    .mutable_state
                    .clone();
                for (id, slots) in snap.skills {
                    if let Some(s) = self.state.skills.get_mut(&id) {
                        s.mastery = slots.mastery;
                        s.prompt_template = slots.prompt_template;
                        s.strategy = slots.strategy;
                    }
                }
                // Bandits registered after the snapshot go away too; they
                // re-register lazily with the same seed.
                self.state.bandits = snap.bandits;
            }
        }
        Ok(())
    }
}

fn check_unit(value: f64, what: &str) -> Result<(), GraphError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(invalid(format!("{what} {value} outside [0,1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
