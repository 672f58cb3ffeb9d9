//! Rank-K retrieval error: how far the embedding retriever's top-K set is
//! from the set an accuracy oracle would pick.

use std::collections::BTreeSet;

use super::{MemoryError, MemoryIndex, RetrievalParams};
use crate::exec::Parallelism;
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub vector: Vec<f64>,
    pub task_type: NodeId,
    pub context_chars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalErrorReport {
    /// Worst query.
    pub max: f64,
    pub mean: f64,
    pub per_query: Vec<f64>,
}

/// Total-variation distance between the uniform distributions on two sets:
/// `1 - |A ∩ B| / max(|A|, |B|)`, 0 when both are empty.
pub fn uniform_tv(a: &BTreeSet<NodeId>, b: &BTreeSet<NodeId>) -> f64 {
    let larger = a.len().max(b.len());
    if larger == 0 {
        return 0.0;
    }
    let shared = a.intersection(b).count();
    1.0 - shared as f64 / larger as f64
}

/// A `k`-subset of `candidates` with the largest total gain. Among equally
/// good subsets, the one sharing the most members with `prefer`, then the
/// smallest ids.
pub fn oracle_top_k(candidates: &[(NodeId, f64)], k: usize, prefer: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(prefer.contains(&b.0).cmp(&prefer.contains(&a.0)))
            .then(a.0.cmp(&b.0))
    });
    ranked.into_iter().take(k).map(|(n, _)| n).collect()
}

/// For every query, compares the retriever's bundle with the oracle top-K
/// over all memories of the query's task type, where `gain(query_index,
/// memory)` is the oracle's value of a memory. Reports the worst and the
/// mean distance.
pub fn measure_retrieval_error<F>(
    index: &MemoryIndex,
    queries: &[RetrievalQuery],
    params: &RetrievalParams,
    gain: F,
    parallelism: Parallelism,
) -> Result<RetrievalErrorReport, MemoryError>
where
    F: Fn(usize, NodeId) -> f64 + Sync,
{
    if queries.is_empty() {
        return Err(MemoryError::Validation("retrieval error needs at least one query".into()));
    }
    let k = params.top_k();
    let per_query = parallelism.map_range(queries.len(), |i| -> Result<f64, MemoryError> {
        let q = &queries[i];
        let bundle = index.retrieve_bundle(&q.vector, q.task_type, q.context_chars, params)?;
        let retrieved: BTreeSet<NodeId> = bundle.node_ids().into_iter().collect();
        let candidates: Vec<(NodeId, f64)> = index
            .all_candidates(&q.vector, q.task_type)?
            .into_iter()
            .map(|s| (s.node, gain(i, s.node)))
            .collect();
        let oracle = oracle_top_k(&candidates, k, &retrieved);
        Ok(uniform_tv(&oracle, &retrieved))
    });
    let per_query = per_query.into_iter().collect::<Result<Vec<_>, _>>()?;
    let max = per_query.iter().copied().fold(0.0, f64::max);
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(RetrievalErrorReport { max, mean, per_query })
}
