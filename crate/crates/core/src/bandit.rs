//! Beta-Bernoulli Thompson sampling with a deterministic warm-up phase.
//!
//! Two families of bandits share this state type: a per-skill routing bandit
//! over inference strategies and a per-task-type search bandit over
//! retrieval strategies. Both are driven by the same per-question 0/1
//! correctness reward.
//!
//! Sampling never keeps generator state between calls. Each draw seeds a
//! fresh ChaCha generator from `(rng_seed, draws)`, so a bandit is fully
//! described by its counters and serializes (and rolls back) as plain data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::stable_hash;

pub const DEFAULT_WARMUP_PER_ARM: u64 = 20;

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("bandit has no arms")]
    NoArms,
    #[error("unknown arm `{0}`")]
    UnknownArm(String),
    #[error("reward must be 0 or 1, got {0}")]
    InvalidReward(u8),
    #[error("duplicate arm `{0}`")]
    DuplicateArm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BanditKind {
    /// Per-skill, over inference strategies.
    Routing,
    /// Per-task-type, over retrieval strategies.
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub arm: String,
    pub successes: u64,
    pub failures: u64,
    pub pulls: u64,
}

impl ArmStats {
    fn new(arm: impl Into<String>) -> Self {
        Self {
            arm: arm.into(),
            successes: 0,
            failures: 0,
            pulls: 0,
        }
    }

    /// Posterior mean under the Beta(1, 1) prior.
    pub fn posterior_mean(&self) -> f64 {
        (1.0 + self.successes as f64) / (2.0 + self.pulls as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: Vec<ArmStats>,
    pub warmup_per_arm: u64,
    pub rng_seed: u64,
    /// Number of Thompson draws taken so far; part of the per-draw seed.
    pub draws: u64,
}

impl BanditState {
    pub fn new<S: AsRef<str>>(arms: &[S], warmup_per_arm: u64, rng_seed: u64) -> Result<Self, BanditError> {
        if arms.is_empty() {
            return Err(BanditError::NoArms);
        }
        let mut stats: Vec<ArmStats> = Vec::with_capacity(arms.len());
        for arm in arms {
            let arm = arm.as_ref();
            if stats.iter().any(|s| s.arm == arm) {
                return Err(BanditError::DuplicateArm(arm.to_string()));
            }
            stats.push(ArmStats::new(arm));
        }
        Ok(Self {
            arms: stats,
            warmup_per_arm,
            rng_seed,
            draws: 0,
        })
    }

    /// Index of the arm still owed warm-up pulls, if any: the least-pulled
    /// arm below the warm-up quota, lowest index first on ties.
    pub fn warmup_arm(&self) -> Option<usize> {
        self.arms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.pulls < self.warmup_per_arm)
            .min_by_key(|(i, a)| (a.pulls, *i))
            .map(|(i, _)| i)
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_arm().is_some()
    }

    /// Thompson choice for draw number `draw`, without touching the state.
    pub fn thompson_choice(&self, draw: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
            &self.rng_seed.to_le_bytes(),
            &draw.to_le_bytes(),
        ]));
        let mut best = 0;
        let mut best_theta = f64::NEG_INFINITY;
        for (i, arm) in self.arms.iter().enumerate() {
            let beta = Beta::new(1.0 + arm.successes as f64, 1.0 + arm.failures as f64)
                .expect("beta parameters are >= 1");
            let theta = beta.sample(&mut rng);
            if theta > best_theta {
                best_theta = theta;
                best = i;
            }
        }
        best
    }

    /// Picks the arm for the next pull. Warm-up arms come first; after that,
    /// one Thompson draw is consumed.
    pub fn select_arm(&mut self) -> Result<&str, BanditError> {
        if self.arms.is_empty() {
            return Err(BanditError::NoArms);
        }
        let idx = match self.warmup_arm() {
            Some(i) => i,
            None => {
                let i = self.thompson_choice(self.draws);
                self.draws += 1;
                i
            }
        };
        Ok(&self.arms[idx].arm)
    }

    /// Greedy choice by posterior mean; used when the bandit is frozen.
    pub fn greedy_arm(&self) -> Result<&str, BanditError> {
        self.arms
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.posterior_mean()
                    .total_cmp(&b.posterior_mean())
                    .then(ib.cmp(ia))
            })
            .map(|(_, a)| a.arm.as_str())
            .ok_or(BanditError::NoArms)
    }

    pub fn update_arm(&mut self, arm: &str, reward: u8) -> Result<(), BanditError> {
        if reward > 1 {
            return Err(BanditError::InvalidReward(reward));
        }
        let stats = self
            .arms
            .iter_mut()
            .find(|a| a.arm == arm)
            .ok_or_else(|| BanditError::UnknownArm(arm.to_string()))?;
        if reward == 1 {
            stats.successes += 1;
        } else {
            stats.failures += 1;
        }
        stats.pulls += 1;
        Ok(())
    }

    pub fn arm(&self, arm: &str) -> Option<&ArmStats> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(arms: &[&str]) -> BanditState {
        BanditState::new(arms, DEFAULT_WARMUP_PER_ARM, 7).unwrap()
    }

    #[test]
    fn warmup_picks_least_pulled_arm() {
        let mut b = state(&["a", "b"]);
        b.arms[0].pulls = 20;
        b.arms[0].successes = 20;
        b.arms[1].pulls = 5;
        b.arms[1].failures = 5;
        assert_eq!(b.select_arm().unwrap(), "b");
        assert_eq!(b.draws, 0);
    }

    #[test]
    fn single_arm_always_selected() {
        let mut b = state(&["only"]);
        for _ in 0..50 {
            let arm = b.select_arm().unwrap().to_string();
            assert_eq!(arm, "only");
            b.update_arm(&arm, 0).unwrap();
        }
    }

    #[test]
    fn zero_arms_is_an_error() {
        let empty: [&str; 0] = [];
        assert_eq!(BanditState::new(&empty, 20, 0).unwrap_err(), BanditError::NoArms);
        let mut b = state(&["a"]);
        b.arms.clear();
        assert_eq!(b.select_arm().unwrap_err(), BanditError::NoArms);
    }

    #[test]
    fn update_counts() {
        let mut b = state(&["a"]);
        b.update_arm("a", 1).unwrap();
        assert_eq!(
            (b.arms[0].successes, b.arms[0].failures, b.arms[0].pulls),
            (1, 0, 1)
        );
        b.arms[0] = ArmStats {
            arm: "a".into(),
            successes: 3,
            failures: 2,
            pulls: 5,
        };
        b.update_arm("a", 0).unwrap();
        assert_eq!(
            (b.arms[0].successes, b.arms[0].failures, b.arms[0].pulls),
            (3, 3, 6)
        );
        assert_eq!(b.update_arm("a", 2), Err(BanditError::InvalidReward(2)));
        assert_eq!(
            b.update_arm("zzz", 1),
            Err(BanditError::UnknownArm("zzz".into()))
        );
    }

    #[test]
    fn warmup_round_robin_by_index() {
        let mut b = BanditState::new(&["x", "y", "z"], 2, 1).unwrap();
        let mut order = Vec::new();
        for _ in 0..6 {
            let arm = b.select_arm().unwrap().to_string();
            b.update_arm(&arm, 1).unwrap();
            order.push(arm);
        }
        assert_eq!(order, ["x", "y", "z", "x", "y", "z"]);
        assert!(!b.in_warmup());
    }

    #[test]
    fn dominant_arm_wins_thompson_draws() {
        // Monte-Carlo oracle: Beta(101, 2) vs Beta(2, 101) essentially never
        // cross, so the strong arm must take at least 99% of draws.
        let mut b = state(&["strong", "weak"]);
        b.arms[0] = ArmStats {
            arm: "strong".into(),
            successes: 100,
            failures: 1,
            pulls: 101,
        };
        b.arms[1] = ArmStats {
            arm: "weak".into(),
            successes: 1,
            failures: 100,
            pulls: 101,
        };
        let wins = (0..10_000).filter(|&d| b.thompson_choice(d) == 0).count();
        assert!(wins >= 9_900, "strong arm won {wins} of 10000");
    }

    #[test]
    fn selection_is_deterministic() {
        let run = || {
            let mut b = BanditState::new(&["a", "b", "c"], 1, 99).unwrap();
            let mut picks = Vec::new();
            for i in 0..40u64 {
                let arm = b.select_arm().unwrap().to_string();
                b.update_arm(&arm, (i % 3 == 0) as u8).unwrap();
                picks.push(arm);
            }
            picks
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn greedy_prefers_higher_posterior_mean() {
        let mut b = state(&["a", "b"]);
        b.update_arm("b", 1).unwrap();
        assert_eq!(b.greedy_arm().unwrap(), "b");
        let fresh = state(&["a", "b"]);
        assert_eq!(fresh.greedy_arm().unwrap(), "a");
    }
}
