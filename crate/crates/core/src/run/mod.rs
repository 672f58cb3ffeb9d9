//! Run directories: persistence, resume, frozen evaluation, audit and
//! growth statistics.
//!
//! Layout:
//!
//! ```text
//! <run>/config.toml           engine configuration (seed always present)
//! <run>/env.json              environment mode and seed
//! <run>/events.jsonl          graph event log, completed iterations only
//! <run>/reports.jsonl         one IterationReport per line
//! <run>/snapshots/snap-NNNNN.json   graph state after iteration NNNNN
//! <run>/eval.json             last frozen evaluation
//! <run>/halted.json           partial report of an iteration that failed
//! ```

pub mod audit;
pub mod scan;
pub mod stats;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{cmd_audit, AuditCheck, AuditReport};
pub use stats::{cmd_stats, growth_table, STATS_HEADER};

use crate::backend::{Backends, CallCounts};
use crate::config::{BackendKind, ConfigError, EngineConfig};
use crate::engine::{simulated_backends, Engine, EngineError, EvalReport, IterationReport};
use crate::env::{EnvError, EnvMode, EnvSpec, SyntheticEnv};
use crate::graph::{event, Event, EventRecord, GraphError, GraphState, KnowledgeGraph, LogError};

pub const CONFIG_FILE: &str = "config.toml";
pub const ENV_FILE: &str = "env.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const EVAL_FILE: &str = "eval.json";
pub const HALTED_FILE: &str = "halted.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("event log integrity error{}: {message}", seq.map(|s| format!(" at seq {s}")).unwrap_or_default())]
    Integrity { seq: Option<u64>, message: String },
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 for integrity and invariant failures, 1 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Integrity { .. } | RunError::Invariant(_) => 2,
            RunError::Engine(EngineError::Graph(GraphError::Frozen)) => 2,
            _ => 1,
        }
    }
}

impl From<LogError> for RunError {
    fn from(e: LogError) -> Self {
        RunError::Integrity {
            seq: e.offending_seq(),
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Frozen evaluation record written to `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: i64,
    pub with_memory: EvalReport,
    pub without_memory: EvalReport,
    pub inference_calls: CallCounts,
}

/// Everything a finished (or halted) `run` produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: EngineConfig,
    pub reports: Vec<IterationReport>,
    pub events_path: PathBuf,
    pub snapshot_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RunError> {
        let root = root.into();
        if !root.join(CONFIG_FILE).is_file() {
            return Err(RunError::Validation(format!(
                "{} is not an initialized run directory (no {CONFIG_FILE})",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn snapshot_path(&self, iter: i64) -> PathBuf {
        self.root.join(SNAPSHOT_DIR).join(format!("snap-{iter:05}.json"))
    }

    pub fn config(&self) -> Result<EngineConfig, RunError> {
        Ok(EngineConfig::load(&self.path(CONFIG_FILE))?)
    }

    pub fn env_spec(&self) -> Result<Option<EnvSpec>, RunError> {
        let p = self.path(ENV_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| RunError::Validation(format!("{}: {e}", p.display())))
    }

    pub fn events(&self) -> Result<Vec<EventRecord>, RunError> {
        let p = self.path(EVENTS_FILE);
        if !p.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(&p).map_err(io_err(&p))?;
        Ok(event::read_records(BufReader::new(f))?)
    }

    pub fn reports(&self) -> Result<Vec<IterationReport>, RunError> {
        let p = self.path(REPORTS_FILE);
        if !p.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(&p).map_err(io_err(&p))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&p))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| RunError::Integrity {
                seq: None,
                message: format!("{} line {}: {e}", p.display(), i + 1),
            })?);
        }
        Ok(out)
    }

    /// Snapshot files in iteration order.
    pub fn snapshot_paths(&self) -> Result<Vec<PathBuf>, RunError> {
        let dir = self.path(SNAPSHOT_DIR);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("snap-") && n.ends_with(".json"))
            })
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn read_snapshot(path: &Path) -> Result<GraphState, RunError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Integrity {
            seq: None,
            message: format!("{}: {e}", path.display()),
        })
    }

    pub fn eval_record(&self) -> Result<Option<EvalRecord>, RunError> {
        let p = self.path(EVAL_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| RunError::Integrity {
                seq: None,
                message: format!("{}: {e}", p.display()),
            })
    }

    fn write_atomic(&self, path: &Path, contents: &str) -> Result<(), RunError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, contents).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn append_lines<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), RunError> {
        let p = self.path(name);
        let f = OpenOptions::new().create(true).append(true).open(&p).map_err(io_err(&p))?;
        let mut w = BufWriter::new(f);
        for item in items {
            serde_json::to_writer(&mut w, item).map_err(|e| RunError::Validation(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err(&p))?;
        }
        w.flush().map_err(io_err(&p))
    }

    fn rewrite_events(&self, records: &[EventRecord]) -> Result<(), RunError> {
        let p = self.path(EVENTS_FILE);
        let mut buf = Vec::new();
        event::write_records(&mut buf, records).map_err(io_err(&p))?;
        self.write_atomic(&p, std::str::from_utf8(&buf).expect("json is utf-8"))
    }
}

/// Creates a run directory from a config file (or the defaults) and
/// records the seed.
pub fn cmd_init(run_dir: &Path, config_path: Option<&Path>, seed: Option<u64>) -> Result<RunDir, RunError> {
    let mut config = match config_path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    if run_dir.join(CONFIG_FILE).exists() {
        return Err(RunError::Validation(format!("{} is already initialized", run_dir.display())));
    }
    fs::create_dir_all(run_dir.join(SNAPSHOT_DIR)).map_err(io_err(run_dir))?;
    let dir = RunDir {
        root: run_dir.to_path_buf(),
    };
    dir.write_atomic(&dir.path(CONFIG_FILE), &config.to_toml_string())?;
    let events = dir.path(EVENTS_FILE);
    File::create(&events).map_err(io_err(&events))?;
    Ok(dir)
}

/// Backends selected by the config.
pub fn make_backends(config: &EngineConfig, env: &SyntheticEnv) -> Result<Backends, RunError> {
    match config.backend {
        BackendKind::Simulated => Ok(simulated_backends(env, config)),
        #[cfg(feature = "http")]
        BackendKind::Http => {
            use crate::backend::http::{Endpoint, HttpEmbedder, HttpModel};
            let ep = |role| Endpoint::from_env(role).map_err(|e| RunError::Validation(e.to_string()));
            Ok(Backends::new(
                Arc::new(HttpModel::new(ep("guidance")?)),
                Arc::new(HttpModel::new(ep("execution")?)),
                Arc::new(HttpEmbedder::new(ep("embedder")?, config.embedding_dimension)),
            ))
        }
        #[cfg(not(feature = "http"))]
        BackendKind::Http => Err(RunError::Validation(
            "backend = \"http\" needs the `http` feature".into(),
        )),
    }
}

/// Records up to and including the last `end_iteration`; when no iteration
/// finished, the setup prefix before the first `begin_iteration`.
pub fn completed_prefix(records: &[EventRecord]) -> &[EventRecord] {
    if let Some(pos) = records
        .iter()
        .rposition(|r| matches!(r.event, Event::EndIteration { .. }))
    {
        return &records[..=pos];
    }
    let setup = records
        .iter()
        .position(|r| matches!(r.event, Event::BeginIteration { .. }))
        .unwrap_or(records.len());
    &records[..setup]
}

fn resolve_env(dir: &RunDir, requested: Option<EnvMode>, seed: u64) -> Result<EnvSpec, RunError> {
    let stored = dir.env_spec()?;
    match (stored, requested) {
        (Some(s), Some(m)) if s.mode != m => Err(RunError::Validation(format!(
            "run was started with env {:?}, not {:?}",
            s.mode, m
        ))),
        (Some(s), _) => Ok(s),
        (None, m) => Ok(EnvSpec {
            mode: m.unwrap_or(EnvMode::StaticQa),
            seed,
        }),
    }
}

/// Loads the engine at the last completed iteration of a run.
pub fn load_engine(dir: &RunDir, backends: Option<Backends>) -> Result<(Engine, Vec<IterationReport>), RunError> {
    let config = dir.config()?;
    let spec = resolve_env(dir, None, config.seed)?;
    let env = Arc::new(SyntheticEnv::new(spec));
    let backends = match backends {
        Some(b) => b,
        None => make_backends(&config, &env)?,
    };
    let records = dir.events()?;
    let prefix = completed_prefix(&records);
    let graph = KnowledgeGraph::replay(config.graph_limits(), prefix).map_err(|e| match e {
        GraphError::Replay { seq, reason } => RunError::Integrity {
            seq: Some(seq),
            message: reason,
        },
        other => RunError::Integrity {
            seq: None,
            message: other.to_string(),
        },
    })?;
    let done = graph.current_iter();
    let reports: Vec<IterationReport> = dir.reports()?.into_iter().filter(|r| r.iter <= done).collect();
    let prev = reports.last().map(|r| r.accuracy);
    let engine = if prefix.is_empty() {
        Engine::new(config, env, backends)?
    } else {
        Engine::from_graph(config, env, backends, graph, prev)?
    };
    Ok((engine, reports))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub env: Option<EnvMode>,
    /// Total iterations the run should reach; defaults to the config value.
    pub iterations: Option<i64>,
    pub resume: bool,
    /// Replaces the config-selected backends (tests, fault injection).
    pub backends: Option<Backends>,
}

/// Runs (or resumes) iterations until the run holds `iterations` of them.
/// Only completed iterations are persisted, so a halted run resumes from
/// its last completed iteration.
pub fn cmd_run(run_dir: &Path, opts: RunOptions) -> Result<RunRecord, RunError> {
    let dir = RunDir::open(run_dir)?;
    let config = dir.config()?;
    let spec = resolve_env(&dir, opts.env, config.seed)?;
    let existing = dir.events()?;
    let completed = completed_prefix(&existing).len();
    if completed > 0 && existing.iter().any(|r| matches!(r.event, Event::EndIteration { .. })) && !opts.resume {
        return Err(RunError::Validation(format!(
            "{} already has completed iterations; pass --resume to continue",
            run_dir.display()
        )));
    }
    if completed < existing.len() {
        dir.rewrite_events(&existing[..completed])?;
    }
    if dir.env_spec()?.is_none() {
        let text = serde_json::to_string_pretty(&spec).expect("env spec serializes");
        dir.write_atomic(&dir.path(ENV_FILE), &text)?;
    }
    let (mut engine, mut reports) = load_engine(&dir, opts.backends)?;
    // Drop report lines for iterations that did not complete.
    let rp = dir.path(REPORTS_FILE);
    if rp.exists() {
        fs::remove_file(&rp).map_err(io_err(&rp))?;
    }
    dir.append_lines(REPORTS_FILE, &reports)?;
    let _ = fs::remove_file(dir.path(HALTED_FILE));

    let target = opts.iterations.unwrap_or(config.number_of_iterations as i64);
    if target < 0 {
        return Err(RunError::Validation(format!("iterations must be non-negative, got {target}")));
    }
    let mut persisted = engine.graph().log().len();
    if persisted > completed {
        // Fresh run: persist the setup records.
        dir.append_lines(EVENTS_FILE, &engine.graph().log()[completed..])?;
    }
    while engine.graph().current_iter() + 1 < target {
        match engine.run_iteration() {
            Ok(report) => {
                let log = engine.graph().log();
                dir.append_lines(EVENTS_FILE, &log[persisted..])?;
                persisted = log.len();
                dir.append_lines(REPORTS_FILE, std::slice::from_ref(&report))?;
                dir.write_atomic(
                    &dir.snapshot_path(report.iter),
                    &engine.graph().state().to_canonical_json(),
                )?;
                reports.push(report);
            }
            Err(e) => {
                if let EngineError::Backend { partial, .. } = &e {
                    let text = serde_json::to_string_pretty(partial.as_ref()).expect("report serializes");
                    dir.write_atomic(&dir.path(HALTED_FILE), &text)?;
                }
                return Err(e.into());
            }
        }
    }
    Ok(RunRecord {
        config,
        reports,
        events_path: dir.path(EVENTS_FILE),
        snapshot_paths: dir.snapshot_paths()?,
    })
}

/// Freezes the graph at the last completed iteration and answers the
/// held-out pool with and without memory. Writes `eval.json`.
pub fn cmd_eval(run_dir: &Path, frozen: bool, backends: Option<Backends>) -> Result<EvalRecord, RunError> {
    let dir = RunDir::open(run_dir)?;
    if dir.snapshot_paths()?.is_empty() {
        return Err(RunError::Validation(format!(
            "{} has no completed iteration to evaluate",
            run_dir.display()
        )));
    }
    let (mut engine, _) = load_engine(&dir, backends)?;
    if frozen {
        engine.freeze();
    }
    let before = engine.backends().calls();
    let held = engine.env().held_out().to_vec();
    let with_memory = engine.evaluate_frozen(&held, true)?;
    let without_memory = engine.evaluate_frozen(&held, false)?;
    let inference_calls = engine.backends().calls().saturating_sub(&before);
    for r in [&with_memory, &without_memory] {
        if r.digest_before != r.digest_after {
            return Err(RunError::Invariant("graph changed during frozen evaluation".into()));
        }
    }
    if inference_calls.tier_total(crate::backend::Tier::Guidance) != 0 {
        return Err(RunError::Invariant("guidance-tier call during frozen evaluation".into()));
    }
    let record = EvalRecord {
        iteration: engine.graph().current_iter(),
        with_memory,
        without_memory,
        inference_calls,
    };
    let text = serde_json::to_string_pretty(&record).expect("eval record serializes");
    dir.write_atomic(&dir.path(EVAL_FILE), &text)?;
    Ok(record)
}
