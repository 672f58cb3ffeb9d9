use proptest::prelude::*;

use super::*;

fn task_graph() -> (KnowledgeGraph, NodeId, NodeId) {
    let mut g = KnowledgeGraph::default();
    let s = g.add_skill("arith", 0.5).unwrap();
    let t = g.add_task_type("sums", Some(s)).unwrap();
    (g, s, t)
}

fn principle(text: &str) -> NewExperience {
    NewExperience {
        task_type: None,
        skill: None,
        confidence: 0.1,
        payload: ExperiencePayload::Principle(PrinciplePayload { text: text.into() }),
    }
}

fn pattern(confidence: f64) -> NewExperience {
    NewExperience {
        task_type: None,
        skill: None,
        confidence,
        payload: ExperiencePayload::AbstractedPattern(PatternPayload {
            summary: "walk then craft".into(),
        }),
    }
}

fn failure(task_type: NodeId, confidence: f64) -> NewExperience {
    NewExperience {
        task_type: Some(task_type),
        skill: None,
        confidence,
        payload: ExperiencePayload::FailureMemory(FailurePayload {
            question: "2+2?".into(),
            wrong_answer: "5".into(),
            corrective_reasoning: "add the units".into(),
            correct_answer: "4".into(),
            kind: FailureKind::Specific,
        }),
    }
}

fn success(task_type: NodeId) -> NewExperience {
    NewExperience {
        task_type: Some(task_type),
        skill: None,
        confidence: 1.0,
        payload: ExperiencePayload::SuccessMemory(SuccessPayload {
            question: "1+1?".into(),
            reasoning_trace: "one and one".into(),
            answer: "2".into(),
            decomposition: vec![],
        }),
    }
}

#[test]
fn first_principle_append_counts() {
    let mut g = KnowledgeGraph::default();
    assert_eq!(g.protected_counts(), ProtectedCounts::default());
    g.append_experience(principle("check units")).unwrap();
    assert_eq!(g.protected_counts().principle, 1);
}

#[test]
fn low_confidence_pattern_is_pruned_but_failure_memory_is_not() {
    let (mut g, _, t) = task_graph();
    let p = g.append_experience(pattern(0.2)).unwrap();
    let f = g.append_experience(failure(t, 0.0)).unwrap();
    let removed = g.prune_low_confidence(0.5).unwrap();
    assert_eq!(removed, vec![p]);
    assert!(g.experience(p).is_none());
    assert!(g.experience(f).is_some());
}

#[test]
fn prune_cases() {
    let mut g = KnowledgeGraph::default();
    assert!(g.prune_low_confidence(0.5).unwrap().is_empty());

    let low = g.append_experience(pattern(0.1)).unwrap();
    let high = g.append_experience(pattern(0.9)).unwrap();
    let prin = g.append_experience(principle("p")).unwrap();
    assert_eq!(g.prune_low_confidence(0.5).unwrap(), vec![low]);
    assert!(g.experience(high).is_some() && g.experience(prin).is_some());

    let (mut g, _, t) = task_graph();
    g.append_experience(principle("p")).unwrap();
    g.append_experience(failure(t, 0.0)).unwrap();
    g.append_experience(success(t)).unwrap();
    let before = g.protected_counts();
    assert!(g.prune_low_confidence(1.0).unwrap().is_empty());
    assert_eq!(g.protected_counts(), before);
}

#[test]
fn counts_after_mixed_appends() {
    let (mut g, _, t) = task_graph();
    g.append_experience(principle("a")).unwrap();
    g.append_experience(principle("b")).unwrap();
    g.append_experience(success(t)).unwrap();
    assert_eq!(
        g.protected_counts(),
        ProtectedCounts {
            principle: 2,
            failure_memory: 0,
            success_memory: 1
        }
    );
}

#[test]
fn prerequisite_cycles_are_rejected() {
    let mut g = KnowledgeGraph::default();
    let a = g.add_skill("a", 0.0).unwrap();
    let b = g.add_skill("b", 0.0).unwrap();
    let c = g.add_skill("c", 0.0).unwrap();
    g.add_prerequisite(a, b).unwrap();
    assert!(matches!(g.add_prerequisite(b, a), Err(GraphError::Cycle(_))));
    g.add_prerequisite(b, c).unwrap();
    let before = g.state().clone();
    let log_len = g.log().len();
    assert!(matches!(g.add_prerequisite(c, a), Err(GraphError::Cycle(_))));
    assert_eq!(g.state(), &before);
    assert_eq!(g.log().len(), log_len);
    assert!(g.skill_dag().topological_order().is_ok());
}

#[test]
fn rollback_restores_mastery() {
    let (mut g, s, _) = task_graph();
    let snap = g.snapshot().unwrap();
    g.set_mastery(s, 0.9).unwrap();
    g.rollback_mutable(snap).unwrap();
    assert_eq!(g.skill(s).unwrap().mastery, 0.5);
}

#[test]
fn rollback_keeps_protected_appends() {
    let (mut g, _, t) = task_graph();
    let snap = g.snapshot().unwrap();
    let ids: Vec<_> = (0..3)
        .map(|_| g.append_experience(failure(t, 0.5)).unwrap())
        .collect();
    let counts = g.protected_counts();
    g.rollback_mutable(snap).unwrap();
    assert_eq!(g.protected_counts(), counts);
    assert_eq!(counts.failure_memory, 3);
    for id in ids {
        assert!(g.experience(id).is_some());
    }
}

#[test]
fn rollback_to_fresh_snapshot_is_identity() {
    let (mut g, s, t) = task_graph();
    g.register_bandit(BanditKind::Routing, s, &["a".into(), "b".into()], 2, 5)
        .unwrap();
    g.append_experience(success(t)).unwrap();
    let snap = g.snapshot().unwrap();
    let before = g.state().to_canonical_json();
    g.rollback_mutable(snap).unwrap();
    assert_eq!(g.state().to_canonical_json(), before);
}

#[test]
fn rollback_restores_bandits_and_templates() {
    let (mut g, s, _) = task_graph();
    g.register_bandit(BanditKind::Routing, s, &["a".into(), "b".into()], 1, 5)
        .unwrap();
    let snap = g.snapshot().unwrap();
    let before = g.mutable_slots();
    let arm = g.bandit_select(BanditKind::Routing, s).unwrap();
    g.bandit_update(BanditKind::Routing, s, &arm, 1).unwrap();
    g.set_prompt_template(s, "new template").unwrap();
    g.set_strategy(s, "decompose").unwrap();
    assert_ne!(g.mutable_slots(), before);
    g.rollback_mutable(snap).unwrap();
    assert_eq!(g.mutable_slots(), before);
}

#[test]
fn unknown_snapshot_is_not_found() {
    let mut g = KnowledgeGraph::default();
    assert_eq!(g.rollback_mutable(7), Err(GraphError::SnapshotNotFound(7)));
}

#[test]
fn snapshot_history_is_bounded() {
    let mut g = KnowledgeGraph::new(GraphLimits {
        snapshot_limit: 3,
        ..GraphLimits::default()
    });
    for _ in 0..5 {
        g.snapshot().unwrap();
    }
    assert_eq!(g.snapshot_ids().collect::<Vec<_>>(), vec![2, 3, 4]);
    assert_eq!(g.rollback_mutable(0), Err(GraphError::SnapshotNotFound(0)));
}

#[test]
fn principle_cap_evicts_oldest_reference() {
    let mut g = KnowledgeGraph::default();
    let s = g.add_skill("s", 0.0).unwrap();
    let ids: Vec<_> = (0..13)
        .map(|i| g.append_experience(principle(&format!("p{i}"))).unwrap())
        .collect();
    for id in &ids[..12] {
        assert_eq!(g.attach_principle(s, *id).unwrap(), None);
    }
    assert_eq!(g.attach_principle(s, ids[12]).unwrap(), Some(ids[0]));
    let refs = &g.skill(s).unwrap().principle_ids;
    assert_eq!(refs.len(), 12);
    assert_eq!(refs.first(), Some(&ids[1]));
    assert!(g.experience(ids[0]).is_some(), "evicted principle stays in the graph");
}

#[test]
fn skill_cap_is_an_error() {
    let mut g = KnowledgeGraph::default();
    for i in 0..30 {
        g.add_skill(&format!("s{i}"), 0.0).unwrap();
    }
    assert_eq!(g.add_skill("one-too-many", 0.0), Err(GraphError::SkillCap { cap: 30 }));
}

#[test]
fn validation_errors() {
    let (mut g, _, _) = task_graph();
    let mut bad = pattern(0.5);
    bad.confidence = 1.5;
    assert!(matches!(g.append_experience(bad), Err(GraphError::Validation(_))));
    let orphan = NewExperience {
        task_type: None,
        ..success(NodeId(0))
    };
    assert!(matches!(g.append_experience(orphan), Err(GraphError::Validation(_))));

    let json = r#"{"id":9,"task_type":null,"skill":null,"confidence":0.5,"created_iter":0,
                   "payload":{"summary":"x"}}"#;
    assert!(serde_json::from_str::<ExperienceNode>(json).is_err());
}

#[test]
fn frozen_graph_rejects_writes() {
    let (mut g, s, _) = task_graph();
    g.freeze();
    assert_eq!(g.set_mastery(s, 0.1), Err(GraphError::Frozen));
    assert_eq!(g.snapshot(), Err(GraphError::Frozen));
}

#[test]
fn node_ids_are_monotone() {
    let (mut g, s, t) = task_graph();
    assert_eq!((s, t), (NodeId(0), NodeId(1)));
    let e = g.add_env_node(EnvClass::Observation, "tree at 3,4").unwrap();
    let p = g.append_experience(principle("x")).unwrap();
    assert_eq!((e, p), (NodeId(2), NodeId(3)));
}

#[test]
fn replay_reproduces_state_and_rejects_tampering() {
    let (mut g, s, t) = task_graph();
    g.register_bandit(BanditKind::Search, t, &["base".into(), "cascade".into()], 1, 3)
        .unwrap();
    g.begin_iteration(0).unwrap();
    let snap = g.snapshot().unwrap();
    for _ in 0..4 {
        let arm = g.bandit_select(BanditKind::Search, t).unwrap();
        g.bandit_update(BanditKind::Search, t, &arm, 1).unwrap();
    }
    g.append_experience(failure(t, 0.3)).unwrap();
    g.append_experience(pattern(0.1)).unwrap();
    g.prune_low_confidence(0.3).unwrap();
    g.set_mastery(s, 0.1 + 0.2).unwrap();
    g.record_failures(t, 3).unwrap();
    g.mark_selected(t).unwrap();
    g.rollback_mutable(snap).unwrap();
    g.end_iteration().unwrap();

    let replayed = KnowledgeGraph::replay(g.limits(), g.log()).unwrap();
    assert_eq!(replayed.state().to_canonical_json(), g.state().to_canonical_json());

    // A prune record that deletes a protected node must not replay.
    let mut log = g.log().to_vec();
    let failure_id = g
        .experiences()
        .find(|n| n.outcome() == Outcome::FailureMemory)
        .unwrap()
        .id;
    for r in log.iter_mut() {
        if let Event::Prune { removed, .. } = &mut r.event {
            removed.push(failure_id);
        }
    }
    assert!(matches!(
        KnowledgeGraph::replay(g.limits(), &log),
        Err(GraphError::Replay { .. })
    ));
}

#[derive(Debug, Clone)]
enum Op {
    Principle,
    Failure,
    Success,
    Pattern(f64),
    Prune(f64),
    Snapshot,
    Rollback,
    Mastery(f64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Principle),
        Just(Op::Failure),
        Just(Op::Success),
        (0.0..=1.0f64).prop_map(Op::Pattern),
        (0.0..=1.0f64).prop_map(Op::Prune),
        Just(Op::Snapshot),
        Just(Op::Rollback),
        (0.0..=1.0f64).prop_map(Op::Mastery),
    ]
}

proptest! {
    #[test]
    fn protected_counts_never_decrease(ops in prop::collection::vec(op(), 1..80)) {
        let (mut g, s, t) = task_graph();
        let mut last_snapshot = None;
        let mut counts = g.protected_counts();
        for op in ops {
            match op {
                Op::Principle => { g.append_experience(principle("p")).unwrap(); }
                Op::Failure => { g.append_experience(failure(t, 0.0)).unwrap(); }
                Op::Success => { g.append_experience(success(t)).unwrap(); }
                Op::Pattern(c) => { g.append_experience(pattern(c)).unwrap(); }
                Op::Prune(th) => {
                    for id in g.prune_low_confidence(th).unwrap() {
                        prop_assert!(g.experience(id).is_none());
                    }
                }
                Op::Snapshot => { last_snapshot = Some(g.snapshot().unwrap()); }
                Op::Rollback => if let Some(id) = last_snapshot {
                    let slots = g.get_snapshot(id).unwrap().mutable_state.clone();
                    g.rollback_mutable(id).unwrap();
                    prop_assert_eq!(g.mutable_slots(), slots);
                },
                Op::Mastery(m) => { g.set_mastery(s, m).unwrap(); }
            }
            let now = g.protected_counts();
            prop_assert!(now.dominates(&counts));
            counts = now;
        }
    }
}
