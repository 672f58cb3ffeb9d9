use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use evograph::env::EnvMode;
use evograph::run::{self, RunError, RunOptions};

/// Frozen-learner self-evolution runs over synthetic environments.
#[derive(Debug, Parser)]
#[command(name = "evograph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a run directory from a config file (defaults when omitted).
    Init {
        run_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run iterations until the run holds `--iterations` of them.
    Run {
        run_dir: PathBuf,
        /// static_qa or sequential. Fixed by the first run.
        #[arg(long)]
        env: Option<EnvMode>,
        /// Total iterations; defaults to number_of_iterations from the config.
        #[arg(long)]
        iterations: Option<i64>,
        /// Continue after the last completed iteration.
        #[arg(long)]
        resume: bool,
    },
    /// Answer the held-out pool from the last completed iteration.
    Eval {
        run_dir: PathBuf,
        /// Freeze graph and bandits first; any write becomes an invariant breach.
        #[arg(long)]
        frozen: bool,
    },
    /// Check a run's event log against the engine invariants.
    Audit { run_dir: PathBuf },
    /// Print the per-iteration growth table as TSV.
    Stats { run_dir: PathBuf },
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Init { run_dir, config, seed } => {
            let dir = run::cmd_init(&run_dir, config.as_deref(), seed)?;
            let cfg = dir.config()?;
            writeln!(out, "initialized {} (seed {})", run_dir.display(), cfg.seed)?;
        }
        Command::Run {
            run_dir,
            env,
            iterations,
            resume,
        } => {
            let rec = run::cmd_run(
                &run_dir,
                RunOptions {
                    env,
                    iterations,
                    resume,
                    backends: None,
                },
            )?;
            for r in &rec.reports {
                writeln!(
                    out,
                    "iter {:>3}  accuracy {:.4}  action {:<10} rollback {:?}",
                    r.iter, r.accuracy, r.evolve_action, r.rollback
                )?;
            }
            writeln!(out, "events: {}", rec.events_path.display())?;
        }
        Command::Eval { run_dir, frozen } => {
            let rec = run::cmd_eval(&run_dir, frozen, None)?;
            writeln!(out, "iteration {}", rec.iteration)?;
            for r in [&rec.with_memory, &rec.without_memory] {
                writeln!(
                    out,
                    "memory {:<5} accuracy {:.4} ({}/{})",
                    r.use_memory, r.accuracy, r.correct, r.questions
                )?;
            }
            let g = rec.inference_calls.tier_total(evograph::backend::Tier::Guidance);
            let e = rec.inference_calls.tier_total(evograph::backend::Tier::Execution);
            writeln!(out, "calls: guidance {g}, execution {e}")?;
            writeln!(out, "guidance fraction: {:.2}%", rec.with_memory.guidance_fraction * 100.0)?;
        }
        Command::Audit { run_dir } => {
            let report = run::cmd_audit(&run_dir)?;
            write!(out, "{report}")?;
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Stats { run_dir } => {
            let table = run::cmd_stats(&run_dir)?;
            out.write_all(table.as_bytes()).context("writing table")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<RunError>().map_or(1, RunError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
