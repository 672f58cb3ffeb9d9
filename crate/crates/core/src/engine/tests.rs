use super::*;
use crate::backend::sim::FailAfter;
use crate::backend::{LanguageModel, RetryPolicy};
use crate::env::SyntheticEnv;
use std::time::Duration;

fn small_config() -> EngineConfig {
    EngineConfig {
        evaluation_pool_per_iteration: 60,
        ..EngineConfig::default()
    }
}

fn engine(config: EngineConfig, seed: u64) -> Engine {
    Engine::simulated(config, Arc::new(SyntheticEnv::static_qa(seed))).unwrap()
}

#[test]
fn rotation_indexing() {
    assert_eq!(rotation_action(0), EvolveAction::Principle);
    assert_eq!(rotation_action(5), EvolveAction::PromptRefinement);
    assert_eq!(rotation_action(2), EvolveAction::ToolAuthoring);
    assert_eq!(rotation_action(7), EvolveAction::SkillSplit);
}

#[test]
fn first_iteration_grows_protected_memory() {
    let mut e = engine(small_config(), 1);
    let before = e.graph().protected_counts();
    let r = e.run_iteration().unwrap();
    let after = e.graph().protected_counts();
    assert!(r.scores.iter().any(|s| s.reward == 1) || r.scores.iter().any(|s| s.reward == 0));
    assert!(after.dominates(&before));
    assert!(after != before);
    assert_eq!(r.iter, 0);
    assert_eq!(r.scores.len(), 60);
    assert!((0.0..=1.0).contains(&r.accuracy));
    for id in r.appended.experience_ids() {
        assert!(e.graph().experience(id).is_some());
    }
    // Iteration 0 extracts principles for the selected types.
    assert_eq!(r.evolve_action, "principle");
    assert_eq!(r.appended.principle.len(), r.selected_task_types.len());
    assert!(!r.selected_frontier.is_empty());
}

#[test]
fn static_env_never_calls_explorer() {
    let mut e = engine(small_config(), 2);
    for _ in 0..3 {
        let r = e.run_iteration().unwrap();
        assert_eq!(r.calls.explorer, 0);
        assert!(r.explore.is_none());
    }
}

#[test]
fn sequential_env_explores_every_iteration() {
    let mut e = Engine::simulated(small_config(), Arc::new(SyntheticEnv::sequential(4))).unwrap();
    let mut reached = 0;
    for _ in 0..6 {
        let r = e.run_iteration().unwrap();
        assert!(r.calls.explorer > 0);
        reached = reached.max(r.explore.as_ref().unwrap().achieved.len());
    }
    assert!(reached >= 2, "explorer reached {reached} achievements");
    assert!(e
        .graph()
        .experiences()
        .any(|n| matches!(&n.payload, ExperiencePayload::RetrievalRecipe(r) if r.kind == RecipeKind::ActionSequence)));
    // Surviving abstracted patterns all have confidence at or above the prune threshold.
    for n in e.graph().experiences().filter(|n| n.outcome() == Outcome::AbstractedPattern) {
        assert!(n.confidence >= 0.3);
    }
}

#[test]
fn single_error_gives_single_failure_memory() {
    let mut e = engine(small_config(), 3);
    let mut report = IterationReport::default();
    e.graph.begin_iteration(0).unwrap();
    let t = e.graph.task_type_by_name("ratio_total").unwrap().clone();
    let skill = t.resolver_skill.unwrap();
    let errors = vec![ErrorRecord {
        question: "q".into(),
        predicted: "1".into(),
        gold: "2".into(),
    }];
    e.author_failure_memories(&t.name, t.id, skill, &errors, &mut report).unwrap();
    assert_eq!(report.appended.failure_memory.len(), 1);
    let two = vec![errors[0].clone(), errors[0].clone()];
    let mut report2 = IterationReport::default();
    e.author_failure_memories(&t.name, t.id, skill, &two, &mut report2).unwrap();
    let kinds: Vec<_> = report2
        .appended
        .failure_memory
        .iter()
        .map(|id| e.graph().experience(*id).unwrap().failure_kind().unwrap())
        .collect();
    assert_eq!(kinds, vec![FailureKind::Specific, FailureKind::Specific, FailureKind::TypeStrategy]);
}

#[test]
fn split_at_cap_is_recorded_not_fatal() {
    let config = EngineConfig {
        skill_growth_cap: 8,
        ..small_config()
    };
    let mut e = engine(config, 5);
    let mut split_report = None;
    for _ in 0..4 {
        split_report = Some(e.run_iteration().unwrap());
    }
    let r = split_report.unwrap();
    assert_eq!(r.evolve_action, "split");
    assert!(r.evolve_errors.iter().any(|m| m.contains("cap")), "{:?}", r.evolve_errors);
    assert_eq!(e.graph().skills().count(), 8);
    // Failure memories for the same iteration were still written.
    assert!(!r.appended.failure_memory.is_empty());
}

#[test]
fn forced_drop_rolls_back_mutable_slots_only() {
    let mut e = engine(small_config(), 6);
    e.run_iteration().unwrap();
    e.run_iteration().unwrap();
    let slots_before = e.graph().mutable_slots();
    e.inject_fault(Fault::AccuracyDrop { iter: 2, drop: 0.04 });
    let r = e.run_iteration().unwrap();
    assert_eq!(r.rollback, Rollback::Delta);
    assert_eq!(e.graph().mutable_slots(), slots_before);
    for id in r.appended.experience_ids() {
        assert!(e.graph().experience(id).is_some());
    }
    assert!(!r.appended.success_memory.is_empty() || !r.appended.failure_memory.is_empty());

    e.inject_fault(Fault::AccuracyDrop { iter: 3, drop: 0.02 });
    let r = e.run_iteration().unwrap();
    assert_eq!(r.rollback, Rollback::None);
    e.inject_fault(Fault::AccuracyDrop { iter: 4, drop: 0.06 });
    assert_eq!(e.run_iteration().unwrap().rollback, Rollback::Catastrophic);
}

#[test]
fn frozen_eval_is_read_only_and_guidance_free() {
    let mut e = engine(small_config(), 7);
    for _ in 0..3 {
        e.run_iteration().unwrap();
    }
    e.freeze();
    let held = e.env().held_out().to_vec();
    let with = e.evaluate_frozen(&held, true).unwrap();
    let without = e.evaluate_frozen(&held, false).unwrap();
    assert_eq!(with.digest_before, with.digest_after);
    assert_eq!(with.calls.tier_total(crate::backend::Tier::Guidance), 0);
    assert_eq!(with.guidance_fraction, 0.0);
    assert!(with.accuracy >= without.accuracy);
    assert!(matches!(e.run_iteration(), Err(EngineError::Graph(GraphError::Frozen))));
}

#[test]
fn frozen_backbone_answers_depend_only_on_graph() {
    let env = Arc::new(SyntheticEnv::static_qa(8));
    let config = small_config();
    let backends = simulated_backends(&env, &config);
    let mut trained = Engine::new(config.clone(), env.clone(), backends.clone()).unwrap();
    for _ in 0..3 {
        trained.run_iteration().unwrap();
    }
    let fresh = Engine::new(config.clone(), env.clone(), backends.clone()).unwrap();
    let twin = Engine::from_graph(config, env.clone(), backends.clone(), trained.graph().clone(), None).unwrap();
    let held = env.held_out();
    let answers = |e: &Engine| -> Vec<String> {
        held.iter()
            .map(|q| {
                let req = e.learner_request_for(q, &Retriever::Embedding).unwrap();
                backends.complete(&req).unwrap()
            })
            .collect()
    };
    assert_eq!(answers(&trained), answers(&twin));
    assert_ne!(answers(&trained), answers(&fresh));
}

#[test]
fn backend_outage_halts_with_partial_report() {
    let env = Arc::new(SyntheticEnv::static_qa(9));
    let config = small_config();
    let bank = env.bank();
    let execution: Arc<dyn LanguageModel> = Arc::new(FailAfter::new(SimulatedExecution::new(bank.clone(), 0), 10));
    let backends = Backends::new(
        Arc::new(SimulatedGuidance::new(bank)),
        execution,
        Arc::new(HashEmbedder::new(config.embedding_dimension, config.seed)),
    )
    .with_retry(RetryPolicy {
        attempts: 3,
        base_delay: Duration::ZERO,
    });
    let mut e = Engine::new(config, env, backends).unwrap();
    match e.run_iteration() {
        Err(EngineError::Backend { iter, partial, .. }) => {
            assert_eq!(iter, 0);
            assert!(partial.calls.learner > 10);
            assert!(!partial.selected_frontier.is_empty());
        }
        other => panic!("expected halt, got {other:?}"),
    }
}

#[test]
fn runs_are_deterministic_across_parallel_modes() {
    let run = |parallel: bool| {
        let mut e = engine(
            EngineConfig {
                parallel,
                ..small_config()
            },
            10,
        );
        for _ in 0..3 {
            e.run_iteration().unwrap();
        }
        e.graph().log().to_vec()
    };
    assert_eq!(run(true), run(false));
}
