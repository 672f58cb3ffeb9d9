//! Executable checks for the selector's starvation bound and the ratchet's
//! retention bounds. Used by property tests and by the run auditor.

use std::collections::BTreeMap;
use std::fmt;

use super::{coverage_gap_bound, CurriculumError, RatchetParams, SelectorParams};
use crate::ids::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatchetBound {
    /// `m_k >= (1 - gamma) * m_{k-1}`
    StepLower,
    /// `m_k <= m_{k-1} + alpha * (1 - m_{k-1})`
    StepUpper,
    /// `m_k >= (1 - gamma)^j * m_{k-j}`
    Window { j: usize },
    /// `m_k >= (1 - gamma)^j * max_{k' <= k-j} m_{k'}`
    PeakWindow { j: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatchetViolation {
    /// Index into the trace.
    pub step: usize,
    pub bound: RatchetBound,
    pub value: f64,
    pub limit: f64,
}

impl fmt::Display for RatchetViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let which = match self.bound {
            RatchetBound::StepLower => "per-step lower bound".to_string(),
            RatchetBound::StepUpper => "per-step upper bound".to_string(),
            RatchetBound::Window { j } => format!("window bound (j={j})"),
            RatchetBound::PeakWindow { j } => format!("prefix-peak window bound (j={j})"),
        };
        write!(
            f,
            "mastery {} at step {} violates {} {}",
            self.value, self.step, which, self.limit
        )
    }
}

/// Checks a mastery trace `m_0, m_1, ...` against the per-step bounds and
/// the window retention bound `m_k >= (1 - gamma)^j * m_{k-j}` for every
/// window length `j`, allowing `tol` slack.
pub fn check_ratchet_trace(trace: &[f64], params: &RatchetParams, tol: f64) -> Result<(), RatchetViolation> {
    let keep = 1.0 - params.gamma;
    for k in 1..trace.len() {
        let (prev, cur) = (trace[k - 1], trace[k]);
        let lower = keep * prev;
        if cur < lower - tol {
            return Err(RatchetViolation {
                step: k,
                bound: RatchetBound::StepLower,
                value: cur,
                limit: lower,
            });
        }
        let upper = prev + params.alpha * (1.0 - prev);
        if cur > upper + tol {
            return Err(RatchetViolation {
                step: k,
                bound: RatchetBound::StepUpper,
                value: cur,
                limit: upper,
            });
        }
        let mut factor = 1.0;
        for j in 1..=k {
            factor *= keep;
            let limit = factor * trace[k - j];
            if cur < limit - tol {
                return Err(RatchetViolation {
                    step: k,
                    bound: RatchetBound::Window { j },
                    value: cur,
                    limit,
                });
            }
        }
    }
    Ok(())
}

/// First violation of the stronger reading
/// `m_k >= (1 - gamma)^j * max_{k' <= k-j} m_{k'}`.
///
/// This reading does not follow from the per-step bound: two decay steps
/// from a peak (`1.0, 0.9, 0.81` with `gamma = 0.1`) already break it at
/// `j = 1`. Kept as a diagnostic.
pub fn peak_window_violation(trace: &[f64], params: &RatchetParams, tol: f64) -> Option<RatchetViolation> {
    let keep = 1.0 - params.gamma;
    let mut prefix_max = Vec::with_capacity(trace.len());
    let mut running = f64::NEG_INFINITY;
    for &m in trace {
        running = running.max(m);
        prefix_max.push(running);
    }
    for k in 1..trace.len() {
        let mut factor = 1.0;
        for j in 1..=k {
            factor *= keep;
            let limit = factor * prefix_max[k - j];
            if trace[k] < limit - tol {
                return Some(RatchetViolation {
                    step: k,
                    bound: RatchetBound::PeakWindow { j },
                    value: trace[k],
                    limit,
                });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapViolation {
    pub iter: i64,
    pub task_type: NodeId,
    pub gap: u64,
    pub bound: u64,
}

impl fmt::Display for GapViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "task type {} waited {} iterations at iteration {} (bound {})",
            self.task_type, self.gap, self.iter, self.bound
        )
    }
}

/// Tracks how long each observed task type has waited since its last
/// selection (or first appearance) and compares the wait against the
/// coverage bound evaluated at the time of measurement.
#[derive(Debug, Clone)]
pub struct GapTracker {
    params: SelectorParams,
    since: BTreeMap<NodeId, i64>,
    max_gap: u64,
}

impl GapTracker {
    pub fn new(params: SelectorParams) -> Result<Self, CurriculumError> {
        params.validate()?;
        Ok(Self {
            params,
            since: BTreeMap::new(),
            max_gap: 0,
        })
    }

    /// Largest closed gap seen so far.
    pub fn max_gap(&self) -> u64 {
        self.max_gap
    }

    /// Records one iteration. `observed` lists every observed task type with
    /// its failure count as the selector saw it; `selected` is the
    /// selector's output.
    pub fn record(
        &mut self,
        k: i64,
        observed: &[(NodeId, u64)],
        selected: &[NodeId],
    ) -> Result<(), GapViolation> {
        for (t, _) in observed {
            self.since.entry(*t).or_insert(k);
        }
        let bound = self.bound(observed);
        for t in selected {
            let start = *self.since.get(t).unwrap_or(&k);
            let gap = (k - start).max(0) as u64;
            self.max_gap = self.max_gap.max(gap);
            if gap > bound {
                return Err(GapViolation {
                    iter: k,
                    task_type: *t,
                    gap,
                    bound,
                });
            }
            self.since.insert(*t, k);
        }
        Ok(())
    }

    /// Checks gaps still open at iteration `k` (the next iteration that
    /// would run). A type whose wait already exceeds the bound has been
    /// starved even though it was never reselected.
    pub fn check_open(&self, k: i64, observed: &[(NodeId, u64)]) -> Result<(), GapViolation> {
        let bound = self.bound(observed);
        for (t, _) in observed {
            if let Some(start) = self.since.get(t) {
                let gap = (k - start).max(0) as u64;
                if gap > bound {
                    return Err(GapViolation {
                        iter: k,
                        task_type: *t,
                        gap,
                        bound,
                    });
                }
            }
        }
        Ok(())
    }

    fn bound(&self, observed: &[(NodeId, u64)]) -> u64 {
        if observed.is_empty() {
            return u64::MAX;
        }
        let n_max = observed.iter().map(|(_, n)| *n).max().unwrap_or(0);
        coverage_gap_bound(observed.len(), n_max, &self.params).expect("validated params")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{mastery_update, round_robin_select, TaskStat};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(start: f64, evidence: &[f64], p: &RatchetParams) -> Vec<f64> {
        let mut out = vec![start];
        for &e in evidence {
            let m = *out.last().unwrap();
            out.push(mastery_update(m, e, p).unwrap());
        }
        out
    }

    #[test]
    fn ratchet_trace_passes_on_real_updates() {
        let p = RatchetParams::default();
        let t = trace(0.0, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.3, 0.9, 0.0], &p);
        check_ratchet_trace(&t, &p, 1e-12).unwrap();
    }

    #[test]
    fn sharp_drop_violates_step_lower() {
        let p = RatchetParams::default();
        let err = check_ratchet_trace(&[0.8, 0.5], &p, 1e-12).unwrap_err();
        assert_eq!(err.bound, RatchetBound::StepLower);
        assert_eq!(err.step, 1);
    }

    #[test]
    fn jump_violates_step_upper() {
        let p = RatchetParams::default();
        let err = check_ratchet_trace(&[0.0, 0.7], &p, 1e-12).unwrap_err();
        assert_eq!(err.bound, RatchetBound::StepUpper);
    }

    #[test]
    fn window_bound_catches_compound_leak() {
        let p = RatchetParams::default();
        // The tolerance hides each single-step shortfall but not the
        // shortfall accumulated over two steps.
        let t = [1.0, 0.89, 0.795];
        let err = check_ratchet_trace(&t, &p, 0.011).unwrap_err();
        assert_eq!(err.bound, RatchetBound::Window { j: 2 });
    }

    #[test]
    fn peak_reading_fails_on_plain_decay() {
        let p = RatchetParams::default();
        let t = trace(1.0, &[0.0, 0.0], &p);
        check_ratchet_trace(&t, &p, 1e-12).unwrap();
        let v = peak_window_violation(&t, &p, 1e-12).unwrap();
        assert_eq!(v.step, 2);
        assert_eq!(v.bound, RatchetBound::PeakWindow { j: 1 });
    }

    #[test]
    fn gap_tracker_flags_starvation() {
        let params = SelectorParams {
            lambda: 1.0,
            max_targets: 1,
        };
        let mut g = GapTracker::new(params).unwrap();
        let (a, b) = (NodeId(1), NodeId(2));
        // bound = ceil(0/1 + 2/1) = 2
        g.record(0, &[(a, 0), (b, 0)], &[a]).unwrap();
        g.record(1, &[(a, 0), (b, 0)], &[a]).unwrap();
        g.record(2, &[(a, 0), (b, 0)], &[a]).unwrap();
        let err = g.record(3, &[(a, 0), (b, 0)], &[b]).unwrap_err();
        assert_eq!(err.gap, 3);
        assert_eq!(err.bound, 2);
        assert!(g.check_open(3, &[(a, 0), (b, 0)]).is_err());
    }

    /// Drives the real selector with an adversarial stream and measures gaps.
    fn simulate(n: usize, params: SelectorParams, iters: i64, seed: u64) -> Result<(), GapViolation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats: Vec<TaskStat> = (0..n as u64)
            .map(|i| TaskStat {
                id: NodeId(i),
                n_fail: 0,
                k_last: -1,
            })
            .collect();
        let mut tracker = GapTracker::new(params).unwrap();
        let mut present = 0usize;
        for k in 0..iters {
            if present < n && rng.random_bool(0.3) {
                present += 1;
            }
            let active = &mut stats[..present.max(1)];
            // A dominated subset keeps failing while the rest never fail.
            for s in active.iter_mut().take(2) {
                s.n_fail += rng.random_range(0..3);
            }
            let observed: Vec<_> = active.iter().map(|s| (s.id, s.n_fail)).collect();
            let picked = round_robin_select(active, k, &params).unwrap();
            tracker.record(k, &observed, &picked)?;
            for s in active.iter_mut() {
                if picked.contains(&s.id) {
                    s.k_last = k;
                }
            }
        }
        Ok(())
    }

    #[test]
    fn selector_respects_gap_bound_in_simulation() {
        for seed in 0..20 {
            for lambda in [0.1, 0.3, 1.0] {
                for m in 1..=3 {
                    let p = SelectorParams {
                        lambda,
                        max_targets: m,
                    };
                    simulate(6, p, 120, seed).unwrap();
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn random_evidence_respects_ratchet_bounds(
            start in 0.0f64..=1.0,
            evidence in prop::collection::vec(0.0f64..=1.0, 0..200),
            alpha in 0.05f64..0.95,
            gamma_frac in 0.01f64..0.99,
        ) {
            let p = RatchetParams { alpha, gamma: alpha * gamma_frac, theta: 0.5 };
            let t = trace(start, &evidence, &p);
            prop_assert!(check_ratchet_trace(&t, &p, 1e-12).is_ok());
        }
    }
}
