//! Memory retrieval over the experience subgraph.
//!
//! Success and failure memories are embedded into two stores. A question
//! retrieves a [`MemoryBundle`] from the stores of its own task type, with
//! a success/failure split that depends on the context length, and the
//! bundle is rendered ahead of the question by [`format_bundle`].
//!
//! The index is derived state: it can always be rebuilt from the graph and
//! the embedder, so it is not part of the event log.

pub mod cascade;
pub mod embed;
pub mod format;
pub mod index;
pub mod retrieval_error;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cascade::{action_recipe, cascade_principles, curriculum_override, record_action_recipe};
pub use embed::HashEmbedder;
pub use format::{format_bundle, format_question, render_skill_lattice};
pub use index::{EmbeddingIndex, IndexEntry, MemoryIndex};
pub use retrieval_error::{measure_retrieval_error, RetrievalErrorReport, RetrievalQuery};

use crate::backend::{BackendError, Embedder};
use crate::graph::{
    DecompositionStep, ExperienceNode, ExperiencePayload, GraphError, KnowledgeGraph, NewExperience, Outcome,
    SuccessPayload,
};
use crate::ids::NodeId;

pub const DEFAULT_LONG_CONTEXT_CHARS: usize = 500;
pub const DEFAULT_TYPE_STRATEGY_FLOOR: f64 = 0.55;
pub const DEFAULT_TRACE_CHAR_CAP: usize = 4000;
pub const DEFAULT_LATTICE_DEPTH: usize = 8;
pub const RECIPE_WINDOW: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("vector dimension {found} does not match index dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("{0:?} memories are not retrievable as exemplars")]
    NotExemplar(Outcome),
    #[error("memory {0} has no task type")]
    MissingTaskType(NodeId),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("embedding failed: {0}")]
    Embed(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub n_success: usize,
    pub n_failure: usize,
}

impl Allocation {
    pub fn total(&self) -> usize {
        self.n_success + self.n_failure
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalParams {
    /// Split used when the context is shorter than `long_context_chars`.
    pub short_context: Allocation,
    pub long_context: Allocation,
    pub long_context_chars: usize,
    /// Minimum cosine similarity for type-strategy failure memories.
    pub type_strategy_floor: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            short_context: Allocation {
                n_success: 2,
                n_failure: 1,
            },
            long_context: Allocation {
                n_success: 1,
                n_failure: 2,
            },
            long_context_chars: DEFAULT_LONG_CONTEXT_CHARS,
            type_strategy_floor: DEFAULT_TYPE_STRATEGY_FLOOR,
        }
    }
}

impl RetrievalParams {
    pub fn top_k(&self) -> usize {
        self.short_context.total()
    }

    pub fn allocation_for(&self, context_chars: usize) -> Allocation {
        if context_chars < self.long_context_chars {
            self.short_context
        } else {
            self.long_context
        }
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let (s, l) = (self.short_context.total(), self.long_context.total());
        if s == 0 || s != l {
            return Err(MemoryError::Validation(format!(
                "short and long context allocations must both sum to top-K >= 1 (got {s} and {l})"
            )));
        }
        if !(-1.0..=1.0).contains(&self.type_strategy_floor) {
            return Err(MemoryError::Validation(format!(
                "type-strategy similarity floor {} outside [-1,1]",
                self.type_strategy_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub node: NodeId,
    pub similarity: f64,
    /// Set for failure memories.
    pub kind: Option<crate::graph::FailureKind>,
}

/// Retrieved exemplars for one question. Both lists are ordered by
/// descending similarity; `allocation` is the split requested before
/// backfill.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBundle {
    pub success: Vec<Scored>,
    pub failure: Vec<Scored>,
    pub allocation: Allocation,
}

impl MemoryBundle {
    pub fn empty() -> Self {
        Self {
            success: Vec::new(),
            failure: Vec::new(),
            allocation: Allocation {
                n_success: 0,
                n_failure: 0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.success.len() + self.failure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.success.iter().chain(&self.failure).map(|s| s.node).collect()
    }
}

/// The text a memory is embedded under: its question.
pub fn memory_text(node: &ExperienceNode) -> Option<&str> {
    match &node.payload {
        ExperiencePayload::SuccessMemory(p) => Some(&p.question),
        ExperiencePayload::FailureMemory(p) => Some(&p.question),
        _ => None,
    }
}

/// Keeps the first `cap` characters.
pub fn truncate_chars(text: &str, cap: usize) -> String {
    match text.char_indices().nth(cap) {
        Some((byte, _)) => text[..byte].to_string(),
        None => text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub question: String,
    pub reasoning_trace: String,
    pub answer: String,
    pub decomposition: Vec<DecompositionStep>,
    pub task_type: NodeId,
    pub skill: Option<NodeId>,
}

/// Appends a judged-correct answer as a protected success memory and
/// indexes it. The trace is cut to `trace_char_cap` characters; the node's
/// iteration is the graph's current one.
pub fn harvest_success(
    graph: &mut KnowledgeGraph,
    index: &mut MemoryIndex,
    embedder: &dyn Embedder,
    harvest: Harvest,
    trace_char_cap: usize,
) -> Result<NodeId, MemoryError> {
    let vector = embedder.embed(&harvest.question)?;
    let id = graph.append_experience(NewExperience {
        task_type: Some(harvest.task_type),
        skill: harvest.skill,
        confidence: 1.0,
        payload: ExperiencePayload::SuccessMemory(SuccessPayload {
            question: harvest.question,
            reasoning_trace: truncate_chars(&harvest.reasoning_trace, trace_char_cap),
            answer: harvest.answer,
            decomposition: harvest.decomposition,
        }),
    })?;
    let node = graph.experience(id).expect("just appended");
    index.index_memory(node, vector)?;
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Parallelism;

    fn setup() -> (KnowledgeGraph, NodeId, MemoryIndex, HashEmbedder) {
        let mut g = KnowledgeGraph::default();
        let t = g.add_task_type("ratios", None).unwrap();
        let e = HashEmbedder::default();
        let idx = MemoryIndex::new(64, Parallelism::Sequential);
        (g, t, idx, e)
    }

    fn harvest(t: NodeId, trace: &str) -> Harvest {
        Harvest {
            question: "Anne has 24 marbles; how many in total?".into(),
            reasoning_trace: trace.into(),
            answer: "72".into(),
            decomposition: vec![],
            task_type: t,
            skill: None,
        }
    }

    #[test]
    fn first_harvest_is_retrievable() {
        let (mut g, t, mut idx, e) = setup();
        let id = harvest_success(&mut g, &mut idx, &e, harvest(t, "x"), 4000).unwrap();
        assert_eq!(g.protected_counts().success_memory, 1);
        let q = e.embed("Anne has 24 marbles; how many in total?").unwrap();
        let b = idx.retrieve_bundle(&q, t, 0, &RetrievalParams::default()).unwrap();
        assert_eq!(b.success[0].node, id);
        assert!((b.success[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_is_cut_at_cap() {
        let (mut g, t, mut idx, e) = setup();
        let long: String = "é".repeat(4100);
        let id = harvest_success(&mut g, &mut idx, &e, harvest(t, &long), 4000).unwrap();
        match &g.experience(id).unwrap().payload {
            ExperiencePayload::SuccessMemory(p) => assert_eq!(p.reasoning_trace.chars().count(), 4000),
            _ => unreachable!(),
        }
    }

    #[test]
    fn decomposition_kept_verbatim() {
        let (mut g, t, mut idx, e) = setup();
        let steps = vec![
            DecompositionStep {
                skill_name: "anchor".into(),
                step_output: "Anne = 24".into(),
            },
            DecompositionStep {
                skill_name: "sum".into(),
                step_output: "24 + 12 + 36 = 72".into(),
            },
        ];
        let mut h = harvest(t, "x");
        h.decomposition = steps.clone();
        let id = harvest_success(&mut g, &mut idx, &e, h, 4000).unwrap();
        match &g.experience(id).unwrap().payload {
            ExperiencePayload::SuccessMemory(p) => assert_eq!(p.decomposition, steps),
            _ => unreachable!(),
        }
    }

    #[test]
    fn allocation_switches_at_threshold() {
        let p = RetrievalParams::default();
        assert_eq!(p.allocation_for(400), Allocation { n_success: 2, n_failure: 1 });
        assert_eq!(p.allocation_for(499), Allocation { n_success: 2, n_failure: 1 });
        assert_eq!(p.allocation_for(500), Allocation { n_success: 1, n_failure: 2 });
        assert_eq!(p.allocation_for(600), Allocation { n_success: 1, n_failure: 2 });
    }
}
