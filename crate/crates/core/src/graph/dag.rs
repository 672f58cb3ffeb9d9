//! Prerequisite DAG over skills: cycle checks, deterministic topological
//! order and transitive prerequisite closure.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prerequisite graph contains a cycle through {0}")]
pub struct CycleError(pub NodeId);

/// Adjacency view of a skill prerequisite graph. An edge `a -> b` means
/// `a` is a prerequisite of `b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillDag {
    nodes: BTreeSet<NodeId>,
    prereqs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    dependents: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl SkillDag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a view from nodes and edges without checking acyclicity;
    /// consumers that need an order call [`topological_order`](Self::topological_order).
    pub fn from_edges(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Self {
        let mut dag = SkillDag::new();
        for n in nodes {
            dag.nodes.insert(n);
        }
        for (from, to) in edges {
            dag.insert_edge(from, to);
        }
        dag
    }

    pub fn add_node(&mut self, node: NodeId) {
        self.nodes.insert(node);
    }

    pub(crate) fn insert_edge(&mut self, from: NodeId, to: NodeId) {
        self.nodes.insert(from);
        self.nodes.insert(to);
        self.prereqs.entry(to).or_default().insert(from);
        self.dependents.entry(from).or_default().insert(to);
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    /// Direct prerequisites of `node`.
    pub fn prerequisites(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.prereqs.get(&node).into_iter().flatten().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.dependents
            .iter()
            .flat_map(|(from, tos)| tos.iter().map(move |to| (*from, *to)))
    }

    /// True if `target` is reachable from `start` along prerequisite edges.
    pub fn reaches(&self, start: NodeId, target: NodeId) -> bool {
        let mut stack = vec![start];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if !seen.insert(n) {
                continue;
            }
            if let Some(next) = self.dependents.get(&n) {
                stack.extend(next.iter().copied());
            }
        }
        false
    }

    /// Would inserting `from -> to` close a cycle?
    pub fn would_create_cycle(&self, from: NodeId, to: NodeId) -> bool {
        from == to || self.reaches(to, from)
    }

    /// Kahn's algorithm, always releasing the smallest ready id first, so the
    /// order is a pure function of the graph.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, CycleError> {
        self.order_subset(&self.nodes)
    }

    /// Topological order restricted to `subset` (edges leaving the subset
    /// are ignored).
    pub fn order_subset(&self, subset: &BTreeSet<NodeId>) -> Result<Vec<NodeId>, CycleError> {
        let mut indegree: BTreeMap<NodeId, usize> = subset.iter().map(|n| (*n, 0)).collect();
        for n in subset {
            for p in self.prerequisites(*n) {
                if subset.contains(&p) {
                    *indegree.get_mut(n).expect("subset member") += 1;
                }
            }
        }
        let mut ready: BTreeSet<NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut order = Vec::with_capacity(subset.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            if let Some(next) = self.dependents.get(&n) {
                for m in next.iter().filter(|m| subset.contains(m)) {
                    let d = indegree.get_mut(m).expect("subset member");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(*m);
                    }
                }
            }
        }
        if order.len() < subset.len() {
            let stuck = indegree
                .iter()
                .find(|(n, d)| **d > 0 && !order.contains(n))
                .map(|(n, _)| *n)
                .expect("some node left with positive indegree");
            return Err(CycleError(stuck));
        }
        Ok(order)
    }

    /// All transitive prerequisites of `node`, excluding `node` itself.
    pub fn ancestors(&self, node: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.prerequisites(node).collect();
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend(self.prerequisites(n));
            }
        }
        out
    }

    /// Prerequisite chain depth of every ancestor of `node` (direct
    /// prerequisites are depth 1, the node itself depth 0), using the
    /// longest path so a node is listed below everything it depends on.
    pub fn ancestor_depths(&self, node: NodeId) -> BTreeMap<NodeId, usize> {
        let mut depth = BTreeMap::new();
        depth.insert(node, 0usize);
        let mut members = self.ancestors(node);
        members.insert(node);
        // Reverse topological order: dependents before prerequisites.
        if let Ok(order) = self.order_subset(&members) {
            for n in order.into_iter().rev() {
                let d = match depth.get(&n) {
                    Some(d) => *d,
                    None => continue,
                };
                for p in self.prerequisites(n) {
                    let e = depth.entry(p).or_insert(0);
                    *e = (*e).max(d + 1);
                }
            }
        }
        depth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u64) -> NodeId {
        NodeId(i)
    }

    #[test]
    fn detects_two_and_three_cycles() {
        let dag = SkillDag::from_edges([n(1), n(2)], [(n(1), n(2))]);
        assert!(dag.would_create_cycle(n(2), n(1)));
        assert!(!dag.would_create_cycle(n(1), n(2)));
        let chain = SkillDag::from_edges([], [(n(1), n(2)), (n(2), n(3))]);
        assert!(chain.would_create_cycle(n(3), n(1)));
        assert!(chain.would_create_cycle(n(1), n(1)));
    }

    #[test]
    fn topological_order_is_smallest_first() {
        let dag = SkillDag::from_edges(
            [n(9)],
            [(n(5), n(2)), (n(1), n(2)), (n(2), n(3))],
        );
        assert_eq!(
            dag.topological_order().unwrap(),
            vec![n(1), n(5), n(2), n(3), n(9)]
        );
    }

    #[test]
    fn cyclic_graph_has_no_order() {
        let dag = SkillDag::from_edges([], [(n(1), n(2)), (n(2), n(1))]);
        assert!(dag.topological_order().is_err());
    }

    #[test]
    fn ancestors_of_diamond() {
        let dag = SkillDag::from_edges(
            [],
            [(n(1), n(2)), (n(1), n(3)), (n(2), n(4)), (n(3), n(4))],
        );
        assert_eq!(
            dag.ancestors(n(4)).into_iter().collect::<Vec<_>>(),
            vec![n(1), n(2), n(3)]
        );
        let depths = dag.ancestor_depths(n(4));
        assert_eq!(depths[&n(1)], 2);
        assert_eq!(depths[&n(2)], 1);
        assert_eq!(depths[&n(4)], 0);
    }
}
