//! Offline invariant checks over a run directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::scan::{scan, Anomaly};
use super::{completed_prefix, RunDir, RunError};
use crate::backend::Tier;
use crate::curriculum::bounds::{check_ratchet_trace, GapTracker};
use crate::graph::{Event, KnowledgeGraph};
use crate::ids::NodeId;

/// Tolerance for the mastery trace checks.
pub const RATCHET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub name: &'static str,
    pub label: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub iterations: usize,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark} ({}) {}: {}", c.label, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn check(name: &'static str, label: &'static str, result: Result<String, String>) -> AuditCheck {
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    AuditCheck {
        name,
        label,
        passed,
        detail,
    }
}

/// Audits a run directory. A log that cannot be parsed is an
/// [`RunError::Integrity`] error naming the offending sequence number;
/// invariant failures are reported as failed checks.
pub fn cmd_audit(run_dir: &Path) -> Result<AuditReport, RunError> {
    let dir = RunDir::open(run_dir)?;
    let config = dir.config()?;
    let records = dir.events()?;
    let prefix = completed_prefix(&records);
    let s = scan(prefix);
    let mut checks = Vec::new();

    // (a) protected memory never shrinks
    let mut res = Ok(format!("{} iterations", s.iterations.len()));
    if let Some(Anomaly::ProtectedRemoved { seq, node, outcome }) = s
        .anomalies
        .iter()
        .find(|a| matches!(a, Anomaly::ProtectedRemoved { .. }))
    {
        res = Err(format!("seq {seq}: prune removed protected {outcome:?} node {node}"));
    } else {
        for w in s.iterations.windows(2) {
            if !w[1].protected.dominates(&w[0].protected) {
                res = Err(format!(
                    "seq {}: protected counts {:?} fell below {:?}",
                    w[1].seq, w[1].protected, w[0].protected
                ));
                break;
            }
        }
    }
    checks.push(check("protected memory is append-only", "a", res));

    // (b) selector gaps stay within the coverage bound
    let res = (|| {
        let mut tracker = GapTracker::new(config.selector_params()).map_err(|e| e.to_string())?;
        for v in &s.iterations {
            tracker
                .record(v.iter, &v.observed, &v.selected)
                .map_err(|e| format!("seq {}: {e}", v.seq))?;
        }
        if let Some(last) = s.iterations.last() {
            tracker
                .check_open(last.iter + 1, &last.observed)
                .map_err(|e| format!("after seq {}: {e}", last.seq))?;
        }
        Ok(format!("largest gap {}", tracker.max_gap()))
    })();
    checks.push(check("no task type starves", "b", res));

    // (c) mastery traces respect the ratchet bounds
    let res = (|| {
        let params = config.ratchet_params();
        let mut traces: BTreeMap<NodeId, Vec<f64>> = s
            .initial_masteries
            .iter()
            .map(|(id, m)| (*id, vec![*m]))
            .collect();
        let mut seq_at: Vec<u64> = Vec::new();
        for v in &s.iterations {
            for (id, m) in &v.masteries {
                traces.entry(*id).or_default().push(*m);
            }
            seq_at.push(v.seq);
        }
        for (id, t) in &traces {
            check_ratchet_trace(t, &params, RATCHET_TOL).map_err(|v| {
                // Traces of skills added mid-run are shorter; align from the end.
                let offset = seq_at.len() + 1 - t.len();
                let seq = (v.step + offset).checked_sub(1).and_then(|i| seq_at.get(i));
                match seq {
                    Some(seq) => format!("skill {id}, end_iteration seq {seq}: {v}"),
                    None => format!("skill {id}: {v}"),
                }
            })?;
        }
        Ok(format!("{} skills", traces.len()))
    })();
    checks.push(check("mastery ratchet bounds hold", "c", res));

    // (d) rollbacks keep protected memory
    let res = match s.anomalies.iter().find(|a| {
        matches!(
            a,
            Anomaly::RollbackLostProtected { .. } | Anomaly::UnknownSnapshot { .. }
        )
    }) {
        Some(Anomaly::RollbackLostProtected { seq, node }) => {
            Err(format!("seq {seq}: rollback lost protected node {node}"))
        }
        Some(Anomaly::UnknownSnapshot { seq, snapshot }) => {
            Err(format!("seq {seq}: rollback to unknown snapshot {snapshot}"))
        }
        _ => Ok(format!("{} rollbacks", s.rollbacks)),
    };
    checks.push(check("rollback preserves protected memory", "d", res));

    // (e) frozen evaluation made no guidance-tier calls
    let res = match dir.eval_record()? {
        None => Ok("no evaluation recorded".to_string()),
        Some(e) => {
            let g = e.inference_calls.tier_total(Tier::Guidance);
            if g == 0 {
                Ok(format!(
                    "{} execution calls, 0 guidance calls",
                    e.inference_calls.tier_total(Tier::Execution)
                ))
            } else {
                Err(format!("{g} guidance-tier calls during frozen evaluation"))
            }
        }
    };
    checks.push(check("inference is guidance-free", "e", res));

    // (f) replay reproduces the last snapshot
    let res = (|| {
        let snaps = dir.snapshot_paths()?;
        let Some(last) = snaps.last() else {
            return Ok(Ok("no snapshot recorded".to_string()));
        };
        let snap = RunDir::read_snapshot(last)?;
        let end = prefix.iter().position(
            |r| matches!(r.event, Event::EndIteration { iter } if iter == snap.iter),
        );
        let Some(end) = end else {
            return Ok(Err(format!(
                "{}: iteration {} has no end_iteration record",
                last.display(),
                snap.iter
            )));
        };
        Ok(match KnowledgeGraph::replay(config.graph_limits(), &prefix[..=end]) {
            Err(e) => Err(e.to_string()),
            Ok(g) if g.state().digest() == snap.digest() => {
                Ok(format!("digest {} at iteration {}", &snap.digest()[..16], snap.iter))
            }
            Ok(_) => Err(format!(
                "replay through seq {end} differs from {}",
                last.display()
            )),
        })
    })();
    let res: Result<String, String> = res.map_err(|e: RunError| e.to_string()).and_then(|r| r);
    checks.push(check("replay matches snapshot", "f", res));

    Ok(AuditReport {
        iterations: s.iterations.len(),
        checks,
    })
}
