//! Event records for the append-only graph log.
//!
//! One JSON object per line: `{"seq":..,"iter":..,"op":..,"payload":{..}}`.
//! Every state change of a [`KnowledgeGraph`](super::KnowledgeGraph) is an
//! [`Event`]; replaying the records in order from an empty graph rebuilds the
//! state exactly, including assigned node ids and bandit counters.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{EnvNode, ExperienceNode};
use crate::bandit::BanditKind;
use crate::ids::NodeId;

pub type SnapshotId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
pub enum Event {
    BeginIteration {
        iter: i64,
    },
    EndIteration {
        iter: i64,
    },
    AddSkill {
        id: NodeId,
        name: String,
        mastery: f64,
        prompt_template: String,
        strategy: String,
    },
    AddTaskType {
        id: NodeId,
        name: String,
        resolver: Option<NodeId>,
    },
    AddPrerequisite {
        from: NodeId,
        to: NodeId,
    },
    ObserveTaskType {
        task_type: NodeId,
    },
    AppendExperience {
        node: ExperienceNode,
    },
    AddEnvNode {
        node: EnvNode,
    },
    Prune {
        threshold: f64,
        removed: Vec<NodeId>,
    },
    SetMastery {
        skill: NodeId,
        value: f64,
    },
    SetPromptTemplate {
        skill: NodeId,
        text: String,
    },
    SetStrategy {
        skill: NodeId,
        text: String,
    },
    AttachPrinciple {
        skill: NodeId,
        principle: NodeId,
        evicted: Option<NodeId>,
    },
    RecordFailures {
        task_type: NodeId,
        count: u64,
    },
    MarkSelected {
        task_type: NodeId,
    },
    RegisterBandit {
        kind: BanditKind,
        context: NodeId,
        arms: Vec<String>,
        warmup: u64,
        seed: u64,
    },
    BanditSelect {
        kind: BanditKind,
        context: NodeId,
        arm: String,
    },
    BanditUpdate {
        kind: BanditKind,
        context: NodeId,
        arm: String,
        reward: u8,
    },
    Snapshot {
        snapshot_id: SnapshotId,
    },
    Rollback {
        snapshot_id: SnapshotId,
    },
}

impl Event {
    pub fn op_name(&self) -> &'static str {
        match self {
            Event::BeginIteration { .. } => "begin_iteration",
            Event::EndIteration { .. } => "end_iteration",
            Event::AddSkill { .. } => "add_skill",
            Event::AddTaskType { .. } => "add_task_type",
            Event::AddPrerequisite { .. } => "add_prerequisite",
            Event::ObserveTaskType { .. } => "observe_task_type",
            Event::AppendExperience { .. } => "append_experience",
            Event::AddEnvNode { .. } => "add_env_node",
            Event::Prune { .. } => "prune",
            Event::SetMastery { .. } => "set_mastery",
            Event::SetPromptTemplate { .. } => "set_prompt_template",
            Event::SetStrategy { .. } => "set_strategy",
            Event::AttachPrinciple { .. } => "attach_principle",
            Event::RecordFailures { .. } => "record_failures",
            Event::MarkSelected { .. } => "mark_selected",
            Event::RegisterBandit { .. } => "register_bandit",
            Event::BanditSelect { .. } => "bandit_select",
            Event::BanditUpdate { .. } => "bandit_update",
            Event::Snapshot { .. } => "snapshot",
            Event::Rollback { .. } => "rollback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub iter: i64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("event log out of sequence at line {line}: expected seq {expected}, found {found}")]
    Sequence {
        line: usize,
        expected: u64,
        found: u64,
    },
    #[error("event log i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl LogError {
    /// Sequence number of the offending record, when known.
    pub fn offending_seq(&self) -> Option<u64> {
        match self {
            LogError::Sequence { expected, .. } => Some(*expected),
            LogError::Parse { line, .. } => Some(*line as u64 - 1),
            LogError::Io(_) => None,
        }
    }
}

pub fn write_records<W: Write>(mut out: W, records: &[EventRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSON-lines log and checks that `seq` counts up from 0 without
/// gaps.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<EventRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord =
            serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
        let expected = out.len() as u64;
        if record.seq != expected {
            return Err(LogError::Sequence {
                line: i + 1,
                expected,
                found: record.seq,
            });
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout_is_seq_iter_op_payload() {
        let r = EventRecord {
            seq: 3,
            iter: 1,
            event: Event::SetMastery {
                skill: NodeId(4),
                value: 0.1 + 0.2,
            },
        };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"seq":3,"iter":1,"op":"set_mastery","payload":{"skill":4,"value":0.30000000000000004}}"#
        );
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn read_rejects_gaps() {
        let text = "{\"seq\":0,\"iter\":0,\"op\":\"begin_iteration\",\"payload\":{\"iter\":0}}\n\
                    {\"seq\":2,\"iter\":0,\"op\":\"end_iteration\",\"payload\":{\"iter\":0}}\n";
        let err = read_records(text.as_bytes()).unwrap_err();
        assert_eq!(err.offending_seq(), Some(1));
    }
}
