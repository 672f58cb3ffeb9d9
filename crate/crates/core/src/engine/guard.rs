//! Per-iteration accuracy guard.

use serde::{Deserialize, Serialize};

/// Slack for comparing accuracy drops against the thresholds, so that a
/// drop of exactly `delta` computed in floating point is not a breach.
pub const GUARD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rollback {
    #[default]
    None,
    /// Drop above the guard threshold: mutable slots restored.
    Delta,
    /// Drop above the catastrophic threshold: restored and flagged.
    Catastrophic,
}

impl Rollback {
    pub fn rolled_back(self) -> bool {
        self != Rollback::None
    }
}

/// Decides whether accuracy fell far enough to restore mutable slots.
pub fn delta_guard(prev: f64, new: f64, delta: f64, catastrophic: f64) -> Rollback {
    let drop = prev - new;
    if drop > catastrophic + GUARD_EPS {
        Rollback::Catastrophic
    } else if drop > delta + GUARD_EPS {
        Rollback::Delta
    } else {
        Rollback::None
    }
}
