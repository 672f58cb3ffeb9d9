//! Prerequisite-aware retrieval helpers: principle closure over the skill
//! DAG, action recipes, and frontier-based skill override.

use std::collections::BTreeSet;

use super::{MemoryError, RECIPE_WINDOW};
use crate::curriculum::learnable_frontier;
use crate::graph::{ExperiencePayload, GraphError, KnowledgeGraph, NewExperience, RecipeKind, RecipePayload};
use crate::ids::NodeId;

fn require_skill(graph: &KnowledgeGraph, skill: NodeId) -> Result<(), MemoryError> {
    graph
        .skill(skill)
        .map(|_| ())
        .ok_or(MemoryError::Graph(GraphError::NotFound { what: "skill", id: skill }))
}

/// Principles of `skill` and of all its transitive prerequisites,
/// prerequisites first, each principle once.
pub fn cascade_principles(graph: &KnowledgeGraph, skill: NodeId) -> Result<Vec<NodeId>, MemoryError> {
    require_skill(graph, skill)?;
    let dag = graph.skill_dag();
    let mut members = dag.ancestors(skill);
    members.insert(skill);
    let order = dag.order_subset(&members).map_err(GraphError::from)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in order {
        for p in &graph.skill(n).expect("dag member").principle_ids {
            if seen.insert(*p) {
                out.push(*p);
            }
        }
    }
    Ok(out)
}

/// Stores the last three actions before a successful achievement as an
/// action recipe for `skill`.
pub fn record_action_recipe(graph: &mut KnowledgeGraph, skill: NodeId, trailing_actions: &[String]) -> Result<NodeId, MemoryError> {
    if trailing_actions.is_empty() {
        return Err(MemoryError::Validation("action recipe needs at least one action".into()));
    }
    require_skill(graph, skill)?;
    let start = trailing_actions.len().saturating_sub(RECIPE_WINDOW);
    let actions = trailing_actions[start..].to_vec();
    let name = graph.skill(skill).expect("checked").name.clone();
    Ok(graph.append_experience(NewExperience {
        task_type: None,
        skill: Some(skill),
        confidence: 1.0,
        payload: ExperiencePayload::RetrievalRecipe(RecipePayload {
            kind: RecipeKind::ActionSequence,
            name: format!("recipe:{name}"),
            description: format!("actions preceding a success with {name}"),
            actions,
        }),
    })?)
}

/// The most recent action recipe stored for `skill`, or an empty list.
pub fn action_recipe(graph: &KnowledgeGraph, skill: NodeId) -> Vec<String> {
    graph
        .experiences()
        .filter(|n| n.skill == Some(skill))
        .filter_map(|n| match &n.payload {
            ExperiencePayload::RetrievalRecipe(r) if r.kind == RecipeKind::ActionSequence => Some(&r.actions),
            _ => None,
        })
        .last()
        .cloned()
        .unwrap_or_default()
}

/// Swaps an already-mastered skill for the least-mastered frontier skill
/// (ties by id). Returns `requested` when it is not mastered, when the
/// frontier is empty, or when the frontier cannot be computed.
pub fn curriculum_override(graph: &KnowledgeGraph, requested: NodeId, theta: f64) -> NodeId {
    let Some(skill) = graph.skill(requested) else {
        return requested;
    };
    if skill.mastery < theta {
        return requested;
    }
    let masteries = graph.masteries();
    let Ok(frontier) = learnable_frontier(&graph.skill_dag(), &masteries, theta) else {
        return requested;
    };
    frontier
        .into_iter()
        .min_by(|a, b| masteries[a].total_cmp(&masteries[b]).then(a.cmp(b)))
        .unwrap_or(requested)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PrinciplePayload;

    fn principle(g: &mut KnowledgeGraph, skill: NodeId, text: &str) -> NodeId {
        let p = g
            .append_experience(NewExperience {
                task_type: None,
                skill: Some(skill),
                confidence: 1.0,
                payload: ExperiencePayload::Principle(PrinciplePayload { text: text.into() }),
            })
            .unwrap();
        g.attach_principle(skill, p).unwrap();
        p
    }

    #[test]
    fn isolated_skill_has_own_principles() {
        let mut g = KnowledgeGraph::default();
        let a = g.add_skill("a", 0.0).unwrap();
        let pa = principle(&mut g, a, "pa");
        assert_eq!(cascade_principles(&g, a).unwrap(), vec![pa]);
        assert!(cascade_principles(&g, NodeId(999)).is_err());
    }

    #[test]
    fn chain_is_prerequisites_first() {
        let mut g = KnowledgeGraph::default();
        let a = g.add_skill("a", 0.0).unwrap();
        let b = g.add_skill("b", 0.0).unwrap();
        let c = g.add_skill("c", 0.0).unwrap();
        g.add_prerequisite(a, b).unwrap();
        g.add_prerequisite(b, c).unwrap();
        let pc = principle(&mut g, c, "pc");
        let pa = principle(&mut g, a, "pa");
        let pb = principle(&mut g, b, "pb");
        assert_eq!(cascade_principles(&g, c).unwrap(), vec![pa, pb, pc]);
    }

    #[test]
    fn diamond_lists_shared_root_once() {
        let mut g = KnowledgeGraph::default();
        let [a, b, c, d] = ["a", "b", "c", "d"].map(|n| g.add_skill(n, 0.0).unwrap());
        for (x, y) in [(a, b), (a, c), (b, d), (c, d)] {
            g.add_prerequisite(x, y).unwrap();
        }
        let pa = principle(&mut g, a, "pa");
        // The same principle node referenced from two skills.
        g.attach_principle(b, pa).unwrap();
        let got = cascade_principles(&g, d).unwrap();
        assert_eq!(got, vec![pa]);
    }

    #[test]
    fn recipe_round_trip_and_window() {
        let mut g = KnowledgeGraph::default();
        let s = g.add_skill("s", 0.0).unwrap();
        let t = g.add_skill("t", 0.0).unwrap();
        assert!(action_recipe(&g, s).is_empty());
        let acts: Vec<String> = ["move", "craft", "place"].map(String::from).to_vec();
        record_action_recipe(&mut g, s, &acts).unwrap();
        assert_eq!(action_recipe(&g, s), acts);
        let five: Vec<String> = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
        record_action_recipe(&mut g, t, &five).unwrap();
        assert_eq!(action_recipe(&g, t), vec!["c", "d", "e"]);
        assert!(matches!(
            record_action_recipe(&mut g, s, &[]),
            Err(MemoryError::Validation(_))
        ));
    }

    #[test]
    fn override_picks_least_mastered_frontier_skill() {
        let mut g = KnowledgeGraph::default();
        let req = g.add_skill("req", 0.9).unwrap();
        let b = g.add_skill("b", 0.1).unwrap();
        let c = g.add_skill("c", 0.3).unwrap();
        g.add_prerequisite(req, b).unwrap();
        g.add_prerequisite(req, c).unwrap();
        assert_eq!(curriculum_override(&g, req, 0.5), b);
        g.set_mastery(req, 0.2).unwrap();
        assert_eq!(curriculum_override(&g, req, 0.5), req);
    }

    #[test]
    fn override_without_frontier_keeps_request() {
        let mut g = KnowledgeGraph::default();
        let req = g.add_skill("req", 0.9).unwrap();
        assert_eq!(curriculum_override(&g, req, 0.5), req);
    }
}
