//! Per-iteration growth table.

use std::path::Path;

use super::scan::{scan, IterationView};
use super::{completed_prefix, RunDir, RunError};
use crate::graph::EventRecord;

pub const STATS_HEADER: &str = "iter\tskills\tfailure_memories\tsuccess_memories\ttask_type_coverage";

fn row(v: &IterationView) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{:.4}",
        v.iter,
        v.skills,
        v.protected.failure_memory,
        v.protected.success_memory,
        v.coverage()
    )
}

/// TSV growth table for completed iterations in `records`, header first.
pub fn growth_table(records: &[EventRecord]) -> String {
    let s = scan(completed_prefix(records));
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for v in &s.iterations {
        out.push_str(&row(v));
        out.push('\n');
    }
    out
}

pub fn cmd_stats(run_dir: &Path) -> Result<String, RunError> {
    let dir = RunDir::open(run_dir)?;
    Ok(growth_table(&dir.events()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_prints_header_only() {
        assert_eq!(growth_table(&[]), format!("{STATS_HEADER}\n"));
    }
}
