//! Engine configuration: a flat TOML document whose keys follow the
//! hyperparameter table names.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{RatchetParams, SelectorParams};
use crate::exec::Parallelism;
use crate::graph::GraphLimits;
use crate::memory::{Allocation, RetrievalParams};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Simulated,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,

    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub round_robin_recency_weight: f64,
    pub max_evolve_targets_per_iter: usize,
    pub memory_retrieval_top_k: usize,
    /// `[success, failure]` slots below the long-context threshold.
    pub short_context_allocation: [usize; 2],
    pub long_context_allocation: [usize; 2],
    pub long_context_threshold_chars: usize,
    pub type_strategy_min_similarity: f64,
    pub memory_refresh_gap: u64,
    pub principles_per_skill_cap: usize,
    pub skill_growth_cap: usize,
    pub search_bandit_warmup_pulls_per_arm: u64,
    pub per_iter_delta_guard: f64,
    pub catastrophic_rollback_threshold: f64,
    pub eval_temperature: f64,
    pub train_temperature: f64,
    pub evaluation_pool_per_iteration: usize,
    pub number_of_iterations: u64,

    pub prune_threshold: f64,
    pub trace_char_cap: usize,
    pub snapshot_limit: usize,
    pub lattice_depth_cap: usize,
    pub embedding_dimension: usize,
    pub routing_arms: Vec<String>,
    pub search_arms: Vec<String>,
    /// Specific failure memories authored per selected task type per
    /// iteration (one type-strategy memory is always added on top).
    pub failure_memories_per_type: usize,
    /// Re-measure accuracy after UPDATE/EVOLVE for the delta guard instead
    /// of reusing the EVALUATE pass.
    pub guard_remeasure: bool,
    pub parallel: bool,
    pub backend: BackendKind,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            alpha: 0.6,
            gamma: 0.1,
            theta: 0.5,
            round_robin_recency_weight: 0.3,
            max_evolve_targets_per_iter: 3,
            memory_retrieval_top_k: 3,
            short_context_allocation: [2, 1],
            long_context_allocation: [1, 2],
            long_context_threshold_chars: 500,
            type_strategy_min_similarity: 0.55,
            memory_refresh_gap: 5,
            principles_per_skill_cap: 12,
            skill_growth_cap: 30,
            search_bandit_warmup_pulls_per_arm: 20,
            per_iter_delta_guard: 0.03,
            catastrophic_rollback_threshold: 0.05,
            eval_temperature: 0.0,
            train_temperature: 0.3,
            evaluation_pool_per_iteration: 200,
            number_of_iterations: 20,
            prune_threshold: 0.3,
            trace_char_cap: 4000,
            snapshot_limit: 64,
            lattice_depth_cap: 8,
            embedding_dimension: 64,
            routing_arms: vec!["direct".into(), "chain".into(), "decompose".into()],
            search_arms: vec!["base".into(), "cascade".into()],
            failure_memories_per_type: 3,
            guard_remeasure: false,
            parallel: true,
            backend: BackendKind::Simulated,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ratchet_params()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.selector_params()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let k = self.memory_retrieval_top_k;
        if k == 0 {
            return Err(invalid("memory_retrieval_top_k must be at least 1"));
        }
        for (name, [s, f]) in [
            ("short_context_allocation", self.short_context_allocation),
            ("long_context_allocation", self.long_context_allocation),
        ] {
            if s + f != k {
                return Err(invalid(format!(
                    "{name} [{s}, {f}] must sum to memory_retrieval_top_k = {k}"
                )));
            }
        }
        self.retrieval_params()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        for (name, v) in [
            ("prune_threshold", self.prune_threshold),
            ("per_iter_delta_guard", self.per_iter_delta_guard),
            ("catastrophic_rollback_threshold", self.catastrophic_rollback_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} outside [0,1]")));
            }
        }
        if self.catastrophic_rollback_threshold < self.per_iter_delta_guard {
            return Err(invalid(
                "catastrophic_rollback_threshold must be at least per_iter_delta_guard",
            ));
        }
        for (name, v) in [
            ("eval_temperature", self.eval_temperature),
            ("train_temperature", self.train_temperature),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be non-negative")));
            }
        }
        for (name, v) in [
            ("memory_refresh_gap", self.memory_refresh_gap as usize),
            ("principles_per_skill_cap", self.principles_per_skill_cap),
            ("skill_growth_cap", self.skill_growth_cap),
            ("evaluation_pool_per_iteration", self.evaluation_pool_per_iteration),
            ("snapshot_limit", self.snapshot_limit),
            ("embedding_dimension", self.embedding_dimension),
            ("trace_char_cap", self.trace_char_cap),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        for (name, arms) in [("routing_arms", &self.routing_arms), ("search_arms", &self.search_arms)] {
            if arms.is_empty() {
                return Err(invalid(format!("{name} must list at least one arm")));
            }
            let mut sorted = arms.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != arms.len() {
                return Err(invalid(format!("{name} contains duplicates")));
            }
        }
        Ok(())
    }

    pub fn ratchet_params(&self) -> RatchetParams {
        RatchetParams {
            alpha: self.alpha,
            gamma: self.gamma,
            theta: self.theta,
        }
    }

    pub fn selector_params(&self) -> SelectorParams {
        SelectorParams {
            lambda: self.round_robin_recency_weight,
            max_targets: self.max_evolve_targets_per_iter,
        }
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        let alloc = |[s, f]: [usize; 2]| Allocation {
            n_success: s,
            n_failure: f,
        };
        RetrievalParams {
            short_context: alloc(self.short_context_allocation),
            long_context: alloc(self.long_context_allocation),
            long_context_chars: self.long_context_threshold_chars,
            type_strategy_floor: self.type_strategy_min_similarity,
        }
    }

    pub fn graph_limits(&self) -> GraphLimits {
        GraphLimits {
            principle_cap: self.principles_per_skill_cap,
            skill_cap: self.skill_growth_cap,
            snapshot_limit: self.snapshot_limit,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.parallel {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = EngineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert!(text.contains("alpha = 0.6"));
        assert_eq!(EngineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = EngineConfig::from_toml_str("alpha = 0.7\n").unwrap();
        assert_eq!(cfg.alpha, 0.7);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.memory_retrieval_top_k, 3);
    }

    #[test]
    fn gamma_above_alpha_is_rejected() {
        let err = EngineConfig::from_toml_str("alpha = 0.6\ngamma = 0.7\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("α > γ"), "{msg}");
    }

    #[test]
    fn unknown_keys_and_bad_allocations_are_rejected() {
        assert!(matches!(
            EngineConfig::from_toml_str("alpah = 0.6\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            EngineConfig::from_toml_str("short_context_allocation = [2, 2]\n"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
