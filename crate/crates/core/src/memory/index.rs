//! Dual success/failure embedding stores with exhaustive cosine scans.

use std::collections::BTreeSet;

use super::embed::{dot, normalize};
use super::{memory_text, Allocation, MemoryBundle, MemoryError, RetrievalParams, Scored};
use crate::backend::Embedder;
use crate::exec::Parallelism;
use crate::graph::{ExperienceNode, FailureKind, KnowledgeGraph, Outcome};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub node: NodeId,
    pub task_type: NodeId,
    pub kind: Option<FailureKind>,
    /// Unit length.
    pub vector: Vec<f64>,
}

/// One store: a flat list of normalized vectors tagged by task type.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn insert(&mut self, mut entry: IndexEntry) -> Result<(), MemoryError> {
        if entry.vector.len() != self.dimension {
            return Err(MemoryError::Dimension {
                expected: self.dimension,
                found: entry.vector.len(),
            });
        }
        if !normalize(&mut entry.vector) {
            return Err(MemoryError::Validation(format!(
                "vector for {} is zero or not finite",
                entry.node
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Entries of `task_type` by descending cosine similarity to `query`
    /// (already unit length), ties by ascending node id.
    pub fn ranked(&self, query: &[f64], task_type: NodeId, parallelism: Parallelism) -> Vec<Scored> {
        let mut hits: Vec<Scored> = parallelism
            .map(&self.entries, |e| {
                (e.task_type == task_type).then(|| Scored {
                    node: e.node,
                    similarity: dot(query, &e.vector),
                    kind: e.kind,
                })
            })
            .into_iter()
            .flatten()
            .collect();
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.node.cmp(&b.node)));
        hits
    }
}

/// The success store and the failure store.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryIndex {
    success: EmbeddingIndex,
    failure: EmbeddingIndex,
    indexed: BTreeSet<NodeId>,
    parallelism: Parallelism,
}

impl MemoryIndex {
    pub fn new(dimension: usize, parallelism: Parallelism) -> Self {
        Self {
            success: EmbeddingIndex::new(dimension),
            failure: EmbeddingIndex::new(dimension),
            indexed: BTreeSet::new(),
            parallelism,
        }
    }

    /// Embeds and indexes every success and failure memory in the graph.
    pub fn build(graph: &KnowledgeGraph, embedder: &dyn Embedder, parallelism: Parallelism) -> Result<Self, MemoryError> {
        let mut index = MemoryIndex::new(embedder.dimension(), parallelism);
        let nodes: Vec<&ExperienceNode> = graph
            .experiences()
            .filter(|n| matches!(n.outcome(), Outcome::SuccessMemory | Outcome::FailureMemory))
            .collect();
        let vectors = parallelism.map(&nodes, |n| embedder.embed(memory_text(n).unwrap_or("")));
        for (node, vector) in nodes.into_iter().zip(vectors) {
            index.index_memory(node, vector?)?;
        }
        Ok(index)
    }

    pub fn dimension(&self) -> usize {
        self.success.dimension()
    }

    pub fn success_store(&self) -> &EmbeddingIndex {
        &self.success
    }

    pub fn failure_store(&self) -> &EmbeddingIndex {
        &self.failure
    }

    pub fn len(&self) -> usize {
        self.indexed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexed.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.indexed.contains(&node)
    }

    /// Routes a success or failure memory to its store. Other outcome
    /// classes are not retrievable as exemplars and are rejected.
    pub fn index_memory(&mut self, node: &ExperienceNode, vector: Vec<f64>) -> Result<(), MemoryError> {
        let task_type = node.task_type.ok_or(MemoryError::MissingTaskType(node.id))?;
        if self.indexed.contains(&node.id) {
            return Err(MemoryError::Validation(format!("{} already indexed", node.id)));
        }
        let entry = IndexEntry {
            node: node.id,
            task_type,
            kind: node.failure_kind(),
            vector,
        };
        match node.outcome() {
            Outcome::SuccessMemory => self.success.insert(entry)?,
            Outcome::FailureMemory => self.failure.insert(entry)?,
            other => return Err(MemoryError::NotExemplar(other)),
        }
        self.indexed.insert(node.id);
        Ok(())
    }

    /// Embeds the memory's question text and indexes it.
    pub fn index_with(&mut self, node: &ExperienceNode, embedder: &dyn Embedder) -> Result<(), MemoryError> {
        let text = memory_text(node).ok_or(MemoryError::NotExemplar(node.outcome()))?;
        let vector = embedder.embed(text)?;
        self.index_memory(node, vector)
    }

    fn unit_query(&self, query: &[f64]) -> Result<Vec<f64>, MemoryError> {
        if query.len() != self.dimension() {
            return Err(MemoryError::Dimension {
                expected: self.dimension(),
                found: query.len(),
            });
        }
        let mut q = query.to_vec();
        if !normalize(&mut q) {
            return Err(MemoryError::Validation("query vector is zero or not finite".into()));
        }
        Ok(q)
    }

    /// Ranked success and failure candidates for a task type. Type-strategy
    /// failure memories below the similarity floor are dropped.
    pub fn ranked_candidates(
        &self,
        query: &[f64],
        task_type: NodeId,
        params: &RetrievalParams,
    ) -> Result<(Vec<Scored>, Vec<Scored>), MemoryError> {
        let q = self.unit_query(query)?;
        let success = self.success.ranked(&q, task_type, self.parallelism);
        let failure = self
            .failure
            .ranked(&q, task_type, self.parallelism)
            .into_iter()
            .filter(|s| s.kind != Some(FailureKind::TypeStrategy) || s.similarity >= params.type_strategy_floor)
            .collect();
        Ok((success, failure))
    }

    /// Top-K bundle for a question: the allocation is chosen by context
    /// length, each side filled by similarity, and any slots one store
    /// cannot fill are backfilled from the other store.
    pub fn retrieve_bundle(
        &self,
        query: &[f64],
        task_type: NodeId,
        context_chars: usize,
        params: &RetrievalParams,
    ) -> Result<MemoryBundle, MemoryError> {
        let allocation = params.allocation_for(context_chars);
        let (success, failure) = self.ranked_candidates(query, task_type, params)?;
        Ok(fill_bundle(success, failure, allocation))
    }

    /// Every indexed memory of `task_type` with its similarity to `query`,
    /// with no floor applied. Used by the oracle retriever.
    pub fn all_candidates(&self, query: &[f64], task_type: NodeId) -> Result<Vec<Scored>, MemoryError> {
        let q = self.unit_query(query)?;
        let mut all = self.success.ranked(&q, task_type, self.parallelism);
        all.extend(self.failure.ranked(&q, task_type, self.parallelism));
        Ok(all)
    }

    /// Bundle made of the `k` candidates with the largest `gain`, ties by
    /// similarity then id, split back into success and failure lists.
    pub fn oracle_bundle<F>(&self, query: &[f64], task_type: NodeId, k: usize, gain: F) -> Result<MemoryBundle, MemoryError>
    where
        F: Fn(NodeId) -> f64,
    {
        let mut all = self.all_candidates(query, task_type)?;
        all.sort_by(|a, b| {
            gain(b.node)
                .total_cmp(&gain(a.node))
                .then(b.similarity.total_cmp(&a.similarity))
                .then(a.node.cmp(&b.node))
        });
        all.truncate(k);
        all.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.node.cmp(&b.node)));
        let (success, failure): (Vec<_>, Vec<_>) = all.into_iter().partition(|s| s.kind.is_none());
        let allocation = Allocation {
            n_success: success.len(),
            n_failure: failure.len(),
        };
        Ok(MemoryBundle {
            success,
            failure,
            allocation,
        })
    }
}

pub(crate) fn fill_bundle(success: Vec<Scored>, failure: Vec<Scored>, allocation: Allocation) -> MemoryBundle {
    let k = allocation.total();
    let mut take_s = allocation.n_success.min(success.len());
    let mut take_f = allocation.n_failure.min(failure.len());
    let spare = k - take_s - take_f;
    if spare > 0 {
        let extra_s = (success.len() - take_s).min(spare);
        take_s += extra_s;
        take_f += (failure.len() - take_f).min(spare - extra_s);
    }
    MemoryBundle {
        success: success.into_iter().take(take_s).collect(),
        failure: failure.into_iter().take(take_f).collect(),
        allocation,
    }
}
