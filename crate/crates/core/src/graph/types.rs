use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bandit::{BanditKind, BanditState};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillNode {
    pub id: NodeId,
    pub name: String,
    pub mastery: f64,
    pub prompt_template: String,
    pub strategy: String,
    /// References into the experience subgraph, oldest first.
    pub principle_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTypeNode {
    pub id: NodeId,
    pub name: String,
    /// Cumulative failures over the whole run.
    pub n_fail: u64,
    /// Iteration of the most recent EVOLVE selection, -1 if never selected.
    pub k_last: i64,
    pub resolver_skill: Option<NodeId>,
    /// Iteration in which a question of this type was first seen.
    pub first_seen: Option<i64>,
}

impl TaskTypeNode {
    pub fn observed(&self) -> bool {
        self.first_seen.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Principle,
    FailureMemory,
    SuccessMemory,
    RetrievalRecipe,
    AbstractedPattern,
}

impl Outcome {
    /// Protected classes are never deleted and never mutated once appended.
    pub fn is_protected(self) -> bool {
        matches!(
            self,
            Outcome::Principle | Outcome::FailureMemory | Outcome::SuccessMemory
        )
    }

    pub const ALL: [Outcome; 5] = [
        Outcome::Principle,
        Outcome::FailureMemory,
        Outcome::SuccessMemory,
        Outcome::RetrievalRecipe,
        Outcome::AbstractedPattern,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Correction for one concrete question.
    Specific,
    /// Correction for a named question pattern of a task type.
    TypeStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub skill_name: String,
    pub step_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessPayload {
    pub question: String,
    pub reasoning_trace: String,
    pub answer: String,
    pub decomposition: Vec<DecompositionStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailurePayload {
    pub question: String,
    pub wrong_answer: String,
    pub corrective_reasoning: String,
    pub correct_answer: String,
    pub kind: FailureKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrinciplePayload {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    /// Authored tool description (no code is ever executed).
    Tool,
    /// Trailing environment actions that preceded a successful achievement.
    ActionSequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipePayload {
    pub kind: RecipeKind,
    pub name: String,
    pub description: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternPayload {
    pub summary: String,
}

/// Outcome-discriminated payload of an experience node. Serialized with an
/// `outcome` tag; a record without one does not parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ExperiencePayload {
    Principle(PrinciplePayload),
    FailureMemory(FailurePayload),
    SuccessMemory(SuccessPayload),
    RetrievalRecipe(RecipePayload),
    AbstractedPattern(PatternPayload),
}

impl ExperiencePayload {
    pub fn outcome(&self) -> Outcome {
        match self {
            ExperiencePayload::Principle(_) => Outcome::Principle,
            ExperiencePayload::FailureMemory(_) => Outcome::FailureMemory,
            ExperiencePayload::SuccessMemory(_) => Outcome::SuccessMemory,
            ExperiencePayload::RetrievalRecipe(_) => Outcome::RetrievalRecipe,
            ExperiencePayload::AbstractedPattern(_) => Outcome::AbstractedPattern,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceNode {
    pub id: NodeId,
    pub task_type: Option<NodeId>,
    pub skill: Option<NodeId>,
    pub confidence: f64,
    pub created_iter: i64,
    pub payload: ExperiencePayload,
}

impl ExperienceNode {
    pub fn outcome(&self) -> Outcome {
        self.payload.outcome()
    }

    pub fn failure_kind(&self) -> Option<FailureKind> {
        match &self.payload {
            ExperiencePayload::FailureMemory(f) => Some(f.kind),
            _ => None,
        }
    }
}

/// Input to [`KnowledgeGraph::append_experience`](super::KnowledgeGraph::append_experience);
/// the graph assigns id and creation iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NewExperience {
    pub task_type: Option<NodeId>,
    pub skill: Option<NodeId>,
    pub confidence: f64,
    pub payload: ExperiencePayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvClass {
    Entity,
    Relation,
    Observation,
    TaskContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvNode {
    pub id: NodeId,
    pub class: EnvClass,
    pub payload: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedCounts {
    pub principle: u64,
    pub failure_memory: u64,
    pub success_memory: u64,
}

impl ProtectedCounts {
    pub fn get(&self, outcome: Outcome) -> Option<u64> {
        match outcome {
            Outcome::Principle => Some(self.principle),
            Outcome::FailureMemory => Some(self.failure_memory),
            Outcome::SuccessMemory => Some(self.success_memory),
            _ => None,
        }
    }

    pub(crate) fn bump(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Principle => self.principle += 1,
            Outcome::FailureMemory => self.failure_memory += 1,
            Outcome::SuccessMemory => self.success_memory += 1,
            _ => {}
        }
    }

    /// Componentwise `self >= earlier`.
    pub fn dominates(&self, earlier: &ProtectedCounts) -> bool {
        self.principle >= earlier.principle
            && self.failure_memory >= earlier.failure_memory
            && self.success_memory >= earlier.success_memory
    }
}

/// Routing and search bandit states, keyed by skill / task-type id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BanditBook {
    pub routing: BTreeMap<NodeId, BanditState>,
    pub search: BTreeMap<NodeId, BanditState>,
}

impl BanditBook {
    pub fn get(&self, kind: BanditKind, context: NodeId) -> Option<&BanditState> {
        match kind {
            BanditKind::Routing => self.routing.get(&context),
            BanditKind::Search => self.search.get(&context),
        }
    }

    pub fn get_mut(&mut self, kind: BanditKind, context: NodeId) -> Option<&mut BanditState> {
        match kind {
            BanditKind::Routing => self.routing.get_mut(&context),
            BanditKind::Search => self.search.get_mut(&context),
        }
    }

    pub(crate) fn map_mut(&mut self, kind: BanditKind) -> &mut BTreeMap<NodeId, BanditState> {
        match kind {
            BanditKind::Routing => &mut self.routing,
            BanditKind::Search => &mut self.search,
        }
    }
}
