//! Prompt rendering for retrieved bundles.
//!
//! Layout (blocks separated by one blank line, no trailing newline):
//!
//! ```text
//! [SUCCESS 1] Q: <question>
//! Reasoning: <trace>
//! A: <answer>
//! Steps: <skill> -> <output> | <skill> -> <output>
//!
//! [CORRECTION 1] conditions: task_type=<name>, skill=<name>, kind=<kind>
//! question: <question>
//! correction: <corrective reasoning>
//! answer: <correct answer>
//!
//! [SKILL LATTICE]
//! <listing>
//!
//! [QUESTION] <question>
//! Context: <context>
//! ```
//!
//! The `Steps:` line appears only for memories with a decomposition, the
//! lattice block only when requested, and the `Context:` line only for a
//! non-empty context.

use std::collections::BTreeSet;

use super::{MemoryBundle, MemoryError};
use crate::graph::{ExperiencePayload, FailureKind, GraphError, KnowledgeGraph};
use crate::ids::NodeId;

pub fn format_question(question: &str, context: &str) -> String {
    if context.is_empty() {
        format!("[QUESTION] {question}")
    } else {
        format!("[QUESTION] {question}\nContext: {context}")
    }
}

fn kind_name(kind: FailureKind) -> &'static str {
    match kind {
        FailureKind::Specific => "specific",
        FailureKind::TypeStrategy => "type_strategy",
    }
}

pub fn format_bundle(
    graph: &KnowledgeGraph,
    bundle: &MemoryBundle,
    question: &str,
    context: &str,
    lattice: Option<&str>,
) -> Result<String, MemoryError> {
    let missing = |id: NodeId| MemoryError::Graph(GraphError::NotFound { what: "memory", id });
    let mut blocks = Vec::with_capacity(bundle.len() + 2);
    for (i, s) in bundle.success.iter().enumerate() {
        let node = graph.experience(s.node).ok_or_else(|| missing(s.node))?;
        let ExperiencePayload::SuccessMemory(p) = &node.payload else {
            return Err(MemoryError::NotExemplar(node.outcome()));
        };
        let mut block = format!(
            "[SUCCESS {}] Q: {}\nReasoning: {}\nA: {}",
            i + 1,
            p.question,
            p.reasoning_trace,
            p.answer
        );
        if !p.decomposition.is_empty() {
            let steps: Vec<String> = p
                .decomposition
                .iter()
                .map(|d| format!("{} -> {}", d.skill_name, d.step_output))
                .collect();
            block.push_str("\nSteps: ");
            block.push_str(&steps.join(" | "));
        }
        blocks.push(block);
    }
    for (j, s) in bundle.failure.iter().enumerate() {
        let node = graph.experience(s.node).ok_or_else(|| missing(s.node))?;
        let ExperiencePayload::FailureMemory(p) = &node.payload else {
            return Err(MemoryError::NotExemplar(node.outcome()));
        };
        let task = node
            .task_type
            .and_then(|t| graph.task_type(t))
            .map(|t| t.name.as_str())
            .unwrap_or("none");
        let skill = node
            .skill
            .and_then(|s| graph.skill(s))
            .map(|s| s.name.as_str())
            .unwrap_or("none");
        blocks.push(format!(
            "[CORRECTION {}] conditions: task_type={}, skill={}, kind={}\nquestion: {}\ncorrection: {}\nanswer: {}",
            j + 1,
            task,
            skill,
            kind_name(p.kind),
            p.question,
            p.corrective_reasoning,
            p.correct_answer
        ));
    }
    if let Some(l) = lattice.filter(|l| !l.is_empty()) {
        blocks.push(format!("[SKILL LATTICE]\n{l}"));
    }
    blocks.push(format_question(question, context));
    Ok(blocks.join("\n\n"))
}

/// Dependency listing for a task type's resolver skill: the skill and its
/// prerequisites up to `depth_cap` levels, prerequisites first, indented
/// two spaces per level toward the resolver. Empty when the task type has
/// no resolver.
pub fn render_skill_lattice(graph: &KnowledgeGraph, task_type: NodeId, depth_cap: usize) -> String {
    let Some(root) = graph.task_type(task_type).and_then(|t| t.resolver_skill) else {
        return String::new();
    };
    if graph.skill(root).is_none() {
        return String::new();
    }
    let dag = graph.skill_dag();
    let depths = dag.ancestor_depths(root);
    let members: BTreeSet<NodeId> = depths
        .iter()
        .filter(|(_, d)| **d <= depth_cap)
        .map(|(n, _)| *n)
        .collect();
    let Ok(order) = dag.order_subset(&members) else {
        return String::new();
    };
    let deepest = members.iter().map(|n| depths[n]).max().unwrap_or(0);
    let name = |n: NodeId| graph.skill(n).map(|s| s.name.clone()).unwrap_or_else(|| n.to_string());
    order
        .iter()
        .map(|&n| {
            let indent = "  ".repeat(deepest - depths[&n]);
            let needs: Vec<String> = dag
                .prerequisites(n)
                .filter(|p| members.contains(p))
                .map(name)
                .collect();
            if needs.is_empty() {
                format!("{indent}- {}", name(n))
            } else {
                format!("{indent}- {} (needs: {})", name(n), needs.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{Allocation, Scored};

    #[test]
    fn empty_bundle_is_bare_question() {
        let g = KnowledgeGraph::default();
        let out = format_bundle(&g, &MemoryBundle::empty(), "What is 2+2?", "", None).unwrap();
        assert_eq!(out, format_question("What is 2+2?", ""));
        assert_eq!(out, "[QUESTION] What is 2+2?");
    }

    #[test]
    fn lattice_of_chain() {
        let mut g = KnowledgeGraph::default();
        let a = g.add_skill("a", 0.0).unwrap();
        let b = g.add_skill("b", 0.0).unwrap();
        let c = g.add_skill("c", 0.0).unwrap();
        let d = g.add_skill("d", 0.0).unwrap();
        g.add_prerequisite(a, b).unwrap();
        g.add_prerequisite(b, c).unwrap();
        g.add_prerequisite(c, d).unwrap();
        let t = g.add_task_type("t", Some(d)).unwrap();
        let lone = g.add_task_type("u", Some(a)).unwrap();
        let none = g.add_task_type("v", None).unwrap();
        let text = render_skill_lattice(&g, t, 8);
        assert_eq!(
            text,
            "- a\n  - b (needs: a)\n    - c (needs: b)\n      - d (needs: c)"
        );
        assert_eq!(text, render_skill_lattice(&g, t, 8));
        assert_eq!(render_skill_lattice(&g, lone, 8), "- a");
        assert_eq!(render_skill_lattice(&g, none, 8), "");
        assert_eq!(render_skill_lattice(&g, t, 1), "- c\n  - d (needs: c)");
    }

    #[test]
    fn unknown_memory_is_an_error() {
        let g = KnowledgeGraph::default();
        let b = MemoryBundle {
            success: vec![Scored {
                node: NodeId(99),
                similarity: 1.0,
                kind: None,
            }],
            failure: vec![],
            allocation: Allocation {
                n_success: 1,
                n_failure: 0,
            },
        };
        assert!(format_bundle(&g, &b, "q", "", None).is_err());
    }
}
