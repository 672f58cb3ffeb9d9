//! Tier call accounting over iteration reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Agent, CallCounts, Tier};

#[derive(Debug, Error, PartialEq)]
#[error("call audit needs at least one report")]
pub struct EmptyAudit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallAudit {
    pub training: CallCounts,
    pub inference: CallCounts,
    /// Guidance share of training calls; 0 when no calls were made.
    pub guidance_fraction_train: f64,
    pub guidance_fraction_infer: f64,
    /// Agents that made guidance-tier calls.
    pub guidance_agents: Vec<Agent>,
}

/// Aggregates per-iteration call counts (`training`) and frozen-evaluation
/// counts (`inference`). Embedder calls are excluded from the fractions.
pub fn call_audit(training: &[CallCounts], inference: &[CallCounts]) -> Result<CallAudit, EmptyAudit> {
    if training.is_empty() && inference.is_empty() {
        return Err(EmptyAudit);
    }
    let mut train = CallCounts::default();
    for c in training {
        train.add(c);
    }
    let mut infer = CallCounts::default();
    for c in inference {
        infer.add(c);
    }
    let guidance_agents = Agent::ALL
        .into_iter()
        .filter(|a| a.tier() == Tier::Guidance && train.get(*a) + infer.get(*a) > 0)
        .collect();
    Ok(CallAudit {
        guidance_fraction_train: train.guidance_fraction().unwrap_or(0.0),
        guidance_fraction_infer: infer.guidance_fraction().unwrap_or(0.0),
        training: train,
        inference: infer,
        guidance_agents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_examples() {
        let train = CallCounts {
            navigator: 1,
            curator: 1,
            learner: 98,
            embedder: 500,
            ..Default::default()
        };
        let infer = CallCounts {
            learner: 40,
            embedder: 40,
            ..Default::default()
        };
        let a = call_audit(&[train], &[infer]).unwrap();
        assert!((a.guidance_fraction_train - 0.02).abs() < 1e-15);
        assert_eq!(a.guidance_fraction_infer, 0.0);
        assert_eq!(a.guidance_agents, vec![Agent::Navigator, Agent::Curator]);
        assert_eq!(call_audit(&[], &[]), Err(EmptyAudit));
    }
}
