//! Scoring of learner answers and per-skill success rates.

use std::collections::BTreeMap;

use super::prompts;
use crate::backend::{BackendError, Backends};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct Judged {
    pub reward: u8,
    pub judge_failed: bool,
}

/// Asks the Critic whether `predicted` matches `gold`. An unreadable
/// verdict scores 0 and is flagged; a missing prediction is wrong without
/// a call.
pub fn judge_answer(
    backends: &Backends,
    question: &str,
    predicted: Option<&str>,
    gold: &str,
    temperature: f64,
) -> Result<Judged, BackendError> {
    let Some(predicted) = predicted else {
        return Ok(Judged {
            reward: 0,
            judge_failed: false,
        });
    };
    let reply = backends.complete(&prompts::judge_request(question, gold, predicted, temperature))?;
    Ok(match prompts::parse_judge_reply(&reply) {
        Some(ok) => Judged {
            reward: u8::from(ok),
            judge_failed: false,
        },
        None => Judged {
            reward: 0,
            judge_failed: true,
        },
    })
}

/// Per-skill rate `correct / attempted` over the whole pool. Skills with no
/// attempts are absent.
pub fn skill_success_rates(outcomes: &[(Option<NodeId>, u8)]) -> BTreeMap<NodeId, f64> {
    let mut tally: BTreeMap<NodeId, (u64, u64)> = BTreeMap::new();
    for (skill, reward) in outcomes {
        if let Some(s) = skill {
            let t = tally.entry(*s).or_default();
            t.0 += u64::from(*reward);
            t.1 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(s, (ok, n))| (s, ok as f64 / n as f64))
        .collect()
}

/// Rewards for `(question, predicted, gold)` triples plus per-skill rates,
/// scoring through the given judge.
pub fn critic_evaluate(
    backends: &Backends,
    answers: &[(String, Option<String>, String, Option<NodeId>)],
    temperature: f64,
) -> Result<(Vec<Judged>, BTreeMap<NodeId, f64>), BackendError> {
    let mut judged = Vec::with_capacity(answers.len());
    for (q, p, g, _) in answers {
        judged.push(judge_answer(backends, q, p.as_deref(), g, temperature)?);
    }
    let outcomes: Vec<_> = answers.iter().zip(&judged).map(|(a, j)| (a.3, j.reward)).collect();
    Ok((judged, skill_success_rates(&outcomes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::sim::SimulatedGuidance;
    use crate::backend::{CompletionRequest, LanguageModel};
    use crate::env::QuestionBank;
    use crate::memory::HashEmbedder;
    use std::sync::Arc;

    fn backends(guidance: Arc<dyn LanguageModel>) -> Backends {
        let g = guidance.clone();
        Backends::new(g, guidance, Arc::new(HashEmbedder::default()))
    }

    #[test]
    fn all_correct_gives_unit_rate() {
        let b = backends(Arc::new(SimulatedGuidance::new(Arc::new(QuestionBank::default()))));
        let s = Some(NodeId(1));
        let answers: Vec<_> = (0..4).map(|i| (format!("q{i}"), Some(i.to_string()), i.to_string(), s)).collect();
        let (j, e) = critic_evaluate(&b, &answers, 0.0).unwrap();
        assert!(j.iter().all(|x| x.reward == 1));
        assert_eq!(e[&NodeId(1)], 1.0);
    }

    #[test]
    fn three_of_four() {
        let b = backends(Arc::new(SimulatedGuidance::new(Arc::new(QuestionBank::default()))));
        let s = Some(NodeId(1));
        let mut answers: Vec<_> = (0..3).map(|i| (format!("q{i}"), Some("7".to_string()), "7".to_string(), s)).collect();
        answers.push(("q3".into(), Some("8".into()), "7".into(), s));
        let (_, e) = critic_evaluate(&b, &answers, 0.0).unwrap();
        assert_eq!(e[&NodeId(1)], 0.75);
        assert!(!e.contains_key(&NodeId(2)));
    }

    struct Mumbler;
    impl LanguageModel for Mumbler {
        fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            Ok("I think so".into())
        }
    }

    #[test]
    fn unreadable_verdict_is_flagged_zero() {
        let b = backends(Arc::new(Mumbler));
        let j = judge_answer(&b, "q", Some("1"), "1", 0.0).unwrap();
        assert_eq!(j, Judged { reward: 0, judge_failed: true });
        assert_eq!(b.calls().critic, 1);
        let none = judge_answer(&b, "q", None, "1", 0.0).unwrap();
        assert_eq!(none.reward, 0);
        assert_eq!(b.calls().critic, 1);
    }
}
