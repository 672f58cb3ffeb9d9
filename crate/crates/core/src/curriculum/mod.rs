//! Curriculum: learnable frontier, EVOLVE target selection and the mastery
//! ratchet.
//!
//! Everything here is a pure function over value inputs.

pub mod bounds;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CycleError, SkillDag};
use crate::ids::NodeId;

pub use bounds::{check_ratchet_trace, peak_window_violation, GapTracker, GapViolation, RatchetBound, RatchetViolation};

pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const DEFAULT_MAX_TARGETS: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("{what} {value} outside [0,1]")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("task type {task_type} has k_last {k_last} after current iteration {k}")]
    FutureSelection { task_type: NodeId, k_last: i64, k: i64 },
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams {
    /// Recency weight.
    pub lambda: f64,
    /// Maximum EVOLVE targets per iteration.
    pub max_targets: usize,
}

impl Default for SelectorParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_targets: DEFAULT_MAX_TARGETS,
        }
    }
}

impl SelectorParams {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(CurriculumError::InvalidParams(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.max_targets == 0 {
            return Err(CurriculumError::InvalidParams(
                "max EVOLVE targets must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatchetParams {
    /// Increase rate.
    pub alpha: f64,
    /// Decay rate.
    pub gamma: f64,
    /// Mastery threshold.
    pub theta: f64,
}

impl Default for RatchetParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            theta: DEFAULT_THETA,
        }
    }
}

impl RatchetParams {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.alpha) || !open_unit(self.gamma) {
            return Err(CurriculumError::InvalidParams(format!(
                "alpha ({}) and gamma ({}) must lie in (0,1)",
                self.alpha, self.gamma
            )));
        }
        if self.gamma >= self.alpha {
            return Err(CurriculumError::InvalidParams(format!(
                "the mastery ratchet requires alpha > gamma (α > γ), got alpha={} gamma={}",
                self.alpha, self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(CurriculumError::OutOfRange {
                what: "theta",
                value: self.theta,
            });
        }
        Ok(())
    }
}

/// Selector input for one task type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskStat {
    pub id: NodeId,
    /// Cumulative failures.
    pub n_fail: u64,
    /// Last selection iteration, -1 if never selected.
    pub k_last: i64,
}

/// Round-robin score `n_fail + lambda * (k - k_last)`.
pub fn round_robin_score(stat: &TaskStat, k: i64, lambda: f64) -> f64 {
    stat.n_fail as f64 + lambda * (k - stat.k_last) as f64
}

/// Scores closer than this relative tolerance are treated as ties, so that
/// e.g. `3 + 0.3*1` and `0.3*11` compare equal despite rounding.
fn score_cmp(a: f64, b: f64) -> Ordering {
    let tol = 1e-9 * a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= tol {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Picks up to `max_targets` task types by descending round-robin score.
///
/// Ties go to the type that has waited longer (larger `k - k_last`), then to
/// the smaller id. Callers set `k_last = k` on the returned types.
pub fn round_robin_select(
    stats: &[TaskStat],
    k: i64,
    params: &SelectorParams,
) -> Result<Vec<NodeId>, CurriculumError> {
    params.validate()?;
    if let Some(bad) = stats.iter().find(|s| s.k_last > k) {
        return Err(CurriculumError::FutureSelection {
            task_type: bad.id,
            k_last: bad.k_last,
            k,
        });
    }
    let ranks_before = |a: &TaskStat, b: &TaskStat| -> bool {
        let sa = round_robin_score(a, k, params.lambda);
        let sb = round_robin_score(b, k, params.lambda);
        match score_cmp(sa, sb) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match (k - a.k_last).cmp(&(k - b.k_last)) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => a.id < b.id,
            },
        }
    };
    // Repeated max-scan: the tolerant comparison is not a total order in
    // general, so it is never handed to a sort.
    let mut remaining: Vec<&TaskStat> = stats.iter().collect();
    let mut picked = Vec::with_capacity(params.max_targets.min(stats.len()));
    while picked.len() < params.max_targets && !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if ranks_before(remaining[i], remaining[best]) {
                best = i;
            }
        }
        picked.push(remaining.swap_remove(best).id);
    }
    Ok(picked)
}

/// Ceiling that ignores floating-point noise just above an integer
/// (`3.0 / 0.3` is `10.000000000000002`).
pub(crate) fn tolerant_ceil(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// Upper bound on how many iterations an observed task type can wait for
/// reselection: `ceil(n_max / lambda + n_observed / max_targets)`.
pub fn coverage_gap_bound(
    n_observed: usize,
    n_max: u64,
    params: &SelectorParams,
) -> Result<u64, CurriculumError> {
    params.validate()?;
    if n_observed == 0 {
        return Err(CurriculumError::InvalidParams(
            "coverage bound needs at least one observed task type".into(),
        ));
    }
    Ok(tolerant_ceil(
        n_max as f64 / params.lambda + n_observed as f64 / params.max_targets as f64,
    ))
}

/// Asymmetric mastery update: moves toward `evidence` at rate `alpha` when
/// the evidence is at or above the current mastery, and decays toward it at
/// rate `gamma` otherwise.
pub fn mastery_update(previous: f64, evidence: f64, params: &RatchetParams) -> Result<f64, CurriculumError> {
    for (what, value) in [("mastery", previous), ("evidence", evidence)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(CurriculumError::OutOfRange { what, value });
        }
    }
    let next = if evidence >= previous {
        params.alpha * evidence + (1.0 - params.alpha) * previous
    } else {
        previous - params.gamma * (previous - evidence)
    };
    Ok(next.clamp(0.0, 1.0))
}

/// Skills below `theta` whose direct prerequisites are all at or above it.
/// Skills missing from `masteries` count as mastery 0.
pub fn learnable_frontier(
    dag: &SkillDag,
    masteries: &BTreeMap<NodeId, f64>,
    theta: f64,
) -> Result<BTreeSet<NodeId>, CurriculumError> {
    dag.topological_order()?;
    let mastery = |n: NodeId| masteries.get(&n).copied().unwrap_or(0.0);
    Ok(dag
        .nodes()
        .iter()
        .copied()
        .filter(|&s| mastery(s) < theta && dag.prerequisites(s).all(|p| mastery(p) >= theta))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u64) -> NodeId {
        NodeId(i)
    }

    fn stat(id: u64, n_fail: u64, k_last: i64) -> TaskStat {
        TaskStat {
            id: n(id),
            n_fail,
            k_last,
        }
    }

    #[test]
    fn single_type_is_selected() {
        let out = round_robin_select(&[stat(1, 0, -1)], 0, &SelectorParams::default()).unwrap();
        assert_eq!(out, vec![n(1)]);
        assert!(round_robin_select(&[], 3, &SelectorParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn starved_type_beats_frequent_failer() {
        // s(A) = 5 + 0.3*0 = 5.0, s(B) = 0 + 0.3*20 = 6.0
        let k = 30;
        let stats = [stat(1, 5, k), stat(2, 0, k - 20)];
        let params = SelectorParams {
            lambda: 0.3,
            max_targets: 1,
        };
        assert_eq!(round_robin_select(&stats, k, &params).unwrap(), vec![n(2)]);
    }

    #[test]
    fn at_most_m_targets() {
        let stats: Vec<_> = (0..10).map(|i| stat(i, i, -1)).collect();
        let out = round_robin_select(&stats, 0, &SelectorParams::default()).unwrap();
        assert_eq!(out, vec![n(9), n(8), n(7)]);
    }

    #[test]
    fn ties_prefer_longer_wait_then_smaller_id() {
        // s = 3 + 0.3*1 vs 0 + 0.3*11: equal up to rounding.
        let stats = [stat(1, 3, 9), stat(2, 0, -1)];
        let params = SelectorParams {
            lambda: 0.3,
            max_targets: 1,
        };
        assert_eq!(round_robin_select(&stats, 10, &params).unwrap(), vec![n(2)]);
        let stats = [stat(5, 1, 2), stat(4, 1, 2)];
        assert_eq!(round_robin_select(&stats, 4, &params).unwrap(), vec![n(4)]);
    }

    #[test]
    fn future_k_last_is_rejected() {
        let err = round_robin_select(&[stat(1, 0, 5)], 4, &SelectorParams::default()).unwrap_err();
        assert!(matches!(err, CurriculumError::FutureSelection { .. }));
    }

    #[test]
    fn selector_is_deterministic() {
        let stats: Vec<_> = (0..8).map(|i| stat(i, (i * 7) % 3, (i as i64 % 4) - 1)).collect();
        let p = SelectorParams::default();
        assert_eq!(
            round_robin_select(&stats, 6, &p).unwrap(),
            round_robin_select(&stats, 6, &p).unwrap()
        );
    }

    #[test]
    fn gap_bound_values() {
        let one = SelectorParams {
            lambda: 0.7,
            max_targets: 1,
        };
        assert_eq!(coverage_gap_bound(1, 0, &one).unwrap(), 1);
        // 3/0.3 + 27/3 = 10 + 9
        assert_eq!(
            coverage_gap_bound(27, 3, &SelectorParams::default()).unwrap(),
            19
        );
        assert!(coverage_gap_bound(0, 3, &SelectorParams::default()).is_err());
    }

    #[test]
    fn ratchet_point_values() {
        let p = RatchetParams::default();
        assert_eq!(mastery_update(0.5, 0.5, &p).unwrap(), 0.5);
        assert!((mastery_update(0.5, 1.0, &p).unwrap() - 0.8).abs() <= 1e-15);
        assert!((mastery_update(0.8, 0.0, &p).unwrap() - 0.72).abs() <= 1e-15);
        assert!(matches!(
            mastery_update(1.2, 0.5, &p),
            Err(CurriculumError::OutOfRange { .. })
        ));
        assert!(mastery_update(0.5, -0.1, &p).is_err());
    }

    #[test]
    fn ratchet_params_validation() {
        let bad = RatchetParams {
            alpha: 0.6,
            gamma: 0.7,
            theta: 0.5,
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("alpha > gamma"), "{msg}");
        assert!(RatchetParams::default().validate().is_ok());
    }

    #[test]
    fn frontier_examples() {
        let mut m = BTreeMap::new();
        let lone = SkillDag::from_edges([n(1)], []);
        m.insert(n(1), 0.0);
        assert_eq!(learnable_frontier(&lone, &m, 0.5).unwrap(), [n(1)].into());
        m.insert(n(1), 0.9);
        assert!(learnable_frontier(&lone, &m, 0.5).unwrap().is_empty());

        // A(0.6) -> B(0.2), A -> C, D(0.3) -> C
        let (a, b, c, d) = (n(1), n(2), n(3), n(4));
        let dag = SkillDag::from_edges([], [(a, b), (a, c), (d, c)]);
        let m: BTreeMap<_, _> = [(a, 0.6), (b, 0.2), (c, 0.1), (d, 0.3)].into();
        // D has no prerequisites and sits below threshold, so it is on the
        // frontier too; C is blocked by D.
        assert_eq!(learnable_frontier(&dag, &m, 0.5).unwrap(), [b, d].into());
        let m: BTreeMap<_, _> = [(a, 0.6), (b, 0.2), (c, 0.1), (d, 0.6)].into();
        assert_eq!(learnable_frontier(&dag, &m, 0.5).unwrap(), [b, c].into());
    }

    #[test]
    fn frontier_rejects_cycles() {
        let dag = SkillDag::from_edges([], [(n(1), n(2)), (n(2), n(1))]);
        assert!(matches!(
            learnable_frontier(&dag, &BTreeMap::new(), 0.5),
            Err(CurriculumError::Cycle(_))
        ));
    }
}
