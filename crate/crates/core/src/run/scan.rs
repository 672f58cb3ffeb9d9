//! Lenient pass over an event log.
//!
//! Unlike replay, the scan never rejects a record: it applies what it can
//! and notes anything that breaks an invariant, so the auditor can name the
//! first offending sequence number.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{Event, EventRecord, Outcome, ProtectedCounts};
use crate::ids::NodeId;

/// State at the end of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationView {
    pub iter: i64,
    /// Sequence number of the `end_iteration` record.
    pub seq: u64,
    pub protected: ProtectedCounts,
    pub skills: usize,
    /// Observed task types with their failure counts.
    pub observed: Vec<(NodeId, u64)>,
    pub selected: Vec<NodeId>,
    pub ever_selected: BTreeSet<NodeId>,
    pub masteries: BTreeMap<NodeId, f64>,
}

impl IterationView {
    /// Fraction of observed task types selected at least once.
    pub fn coverage(&self) -> f64 {
        if self.observed.is_empty() {
            return 0.0;
        }
        let hit = self.observed.iter().filter(|(t, _)| self.ever_selected.contains(t)).count();
        hit as f64 / self.observed.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Anomaly {
    /// A prune record listed a protected node.
    ProtectedRemoved { seq: u64, node: NodeId, outcome: Outcome },
    /// A rollback left a protected node from its snapshot missing.
    RollbackLostProtected { seq: u64, node: NodeId },
    /// A rollback named a snapshot that was never taken.
    UnknownSnapshot { seq: u64, snapshot: u64 },
}

#[derive(Debug, Default)]
pub struct Scan {
    pub iterations: Vec<IterationView>,
    pub anomalies: Vec<Anomaly>,
    /// Number of rollback records seen.
    pub rollbacks: usize,
    /// Mastery at the end of the setup phase, per skill.
    pub initial_masteries: BTreeMap<NodeId, f64>,
}

#[derive(Default)]
struct Shadow {
    experience: BTreeMap<NodeId, Outcome>,
    skills: BTreeMap<NodeId, f64>,
    n_fail: BTreeMap<NodeId, u64>,
    observed: BTreeSet<NodeId>,
    selected: Vec<NodeId>,
    ever_selected: BTreeSet<NodeId>,
    snapshots: BTreeMap<u64, (BTreeSet<NodeId>, BTreeMap<NodeId, f64>)>,
}

impl Shadow {
    fn protected_live(&self) -> BTreeSet<NodeId> {
        self.experience
            .iter()
            .filter(|(_, o)| o.is_protected())
            .map(|(id, _)| *id)
            .collect()
    }

    fn counts(&self) -> ProtectedCounts {
        let mut c = ProtectedCounts::default();
        for o in self.experience.values() {
            c.bump(*o);
        }
        c
    }
}

pub fn scan(records: &[EventRecord]) -> Scan {
    let mut s = Shadow::default();
    let mut out = Scan::default();
    let mut setup_done = false;
    for r in records {
        match &r.event {
            Event::BeginIteration { .. } => {
                if !setup_done {
                    out.initial_masteries = s.skills.clone();
                    setup_done = true;
                }
                s.selected.clear();
            }
            Event::EndIteration { iter } => {
                out.iterations.push(IterationView {
                    iter: *iter,
                    seq: r.seq,
                    protected: s.counts(),
                    skills: s.skills.len(),
                    observed: s
                        .observed
                        .iter()
                        .map(|t| (*t, s.n_fail.get(t).copied().unwrap_or(0)))
                        .collect(),
                    selected: s.selected.clone(),
                    ever_selected: s.ever_selected.clone(),
                    masteries: s.skills.clone(),
                });
            }
            Event::AddSkill { id, mastery, .. } => {
                s.skills.insert(*id, *mastery);
            }
            Event::AddTaskType { id, .. } => {
                s.n_fail.insert(*id, 0);
            }
            Event::ObserveTaskType { task_type } => {
                s.observed.insert(*task_type);
            }
            Event::AppendExperience { node } => {
                s.experience.insert(node.id, node.outcome());
            }
            Event::Prune { removed, .. } => {
                for id in removed {
                    if let Some(o) = s.experience.remove(id) {
                        if o.is_protected() {
                            out.anomalies.push(Anomaly::ProtectedRemoved {
                                seq: r.seq,
                                node: *id,
                                outcome: o,
                            });
                        }
                    }
                }
            }
            Event::SetMastery { skill, value } => {
                s.skills.insert(*skill, *value);
            }
            Event::RecordFailures { task_type, count } => {
                *s.n_fail.entry(*task_type).or_default() += count;
            }
            Event::MarkSelected { task_type } => {
                s.selected.push(*task_type);
                s.ever_selected.insert(*task_type);
            }
            Event::Snapshot { snapshot_id } => {
                s.snapshots
                    .insert(*snapshot_id, (s.protected_live(), s.skills.clone()));
            }
            Event::Rollback { snapshot_id } => {
                out.rollbacks += 1;
                match s.snapshots.get(snapshot_id) {
                    Some((protected, masteries)) => {
                        let live = s.protected_live();
                        if let Some(lost) = protected.iter().find(|id| !live.contains(id)) {
                            out.anomalies.push(Anomaly::RollbackLostProtected { seq: r.seq, node: *lost });
                        }
                        for (id, m) in masteries.clone() {
                            s.skills.insert(id, m);
                        }
                    }
                    None => out.anomalies.push(Anomaly::UnknownSnapshot {
                        seq: r.seq,
                        snapshot: *snapshot_id,
                    }),
                }
            }
            Event::AddPrerequisite { .. }
            | Event::AddEnvNode { .. }
            | Event::SetPromptTemplate { .. }
            | Event::SetStrategy { .. }
            | Event::AttachPrinciple { .. }
            | Event::RegisterBandit { .. }
            | Event::BanditSelect { .. }
            | Event::BanditUpdate { .. } => {}
        }
    }
    if !setup_done {
        out.initial_masteries = s.skills.clone();
    }
    out
}
