use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use waan::report::{report_from_trace, summarize, write_reports, RunReport};
use waan::trace::read_jsonl;
use waan::{load_scenario, run_matrix, Mode, RunError, RunOutput, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "waan", version, about = "Intent handover simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario with one seed and mode.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every seed × mode cell in parallel.
    Matrix {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "waan,baseline")]
        modes: Vec<Mode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild reports from trace files.
    Report {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

enum Failure {
    Validation(String),
    Invariant(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).map_err(|e| match e {
        ScenarioError::Io { .. } => Failure::Validation(e.to_string()),
        _ => Failure::Validation(format!("{}: {e}", path.display())),
    })
}

fn stem(sc: &Scenario, seed: u64, mode: Mode) -> String {
    format!("{}-{}-{}", sc.name, mode, seed)
}

/// Writes the trace and every rendezvous audit log; returns the trace's report.
fn persist(
    sc: &Scenario,
    seed: u64,
    mode: Mode,
    out: &RunOutput,
    dir: &Path,
) -> anyhow::Result<RunReport> {
    std::fs::create_dir_all(dir)?;
    let base = stem(sc, seed, mode);
    let trace_path = dir.join(format!("{base}.trace.jsonl"));
    std::fs::write(&trace_path, out.trace_jsonl())
        .with_context(|| trace_path.display().to_string())?;
    for (node, store) in &out.stores {
        let p = dir.join(format!("{base}.audit-{node}.jsonl"));
        std::fs::write(&p, store.export_jsonl()).with_context(|| p.display().to_string())?;
    }
    Ok(report_from_trace(&out.trace)?)
}

fn on_run_error(sc: &Scenario, seed: u64, mode: Mode, e: RunError, dir: &Path) -> Failure {
    match e {
        RunError::Invalid(v) => Failure::Validation(v.join("; ")),
        RunError::Invariant { t, message, trace } => {
            let p = dir.join(format!("{}.partial.trace.jsonl", stem(sc, seed, mode)));
            let saved = std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&p, waan::trace::to_jsonl(&trace)))
                .map(|_| format!(" (partial trace in {})", p.display()))
                .unwrap_or_default();
            Failure::Invariant(format!("t={t}: {message}{saved}"))
        }
    }
}

fn print_summary(reports: &[RunReport]) {
    for (mode, s) in summarize(reports) {
        println!(
            "{mode:>8}: runs={} intents={} delivered={} executed={} recomputed={} handovers={} ok={} fallback={} abort={} mean_completion_ms={}",
            s.runs,
            s.intents,
            s.delivered,
            s.executed_units,
            s.recomputed_units,
            s.handovers,
            s.successes,
            s.fallback_successes,
            s.aborts,
            s.mean_completion_time.map_or("-".into(), |m| format!("{m:.1}")),
        );
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Validate { scenario } => {
            let sc = load(&scenario)?;
            println!("ok {} {}", sc.name, sc.hash());
            Ok(())
        }
        Cmd::Run {
            scenario,
            seed,
            mode,
            out,
        } => {
            let sc = load(&scenario)?;
            let seed = seed.unwrap_or(sc.seeds[0]);
            let mode = mode.unwrap_or(sc.mode);
            let res =
                waan::run(&sc, seed, mode).map_err(|e| on_run_error(&sc, seed, mode, e, &out))?;
            let report = persist(&sc, seed, mode, &res, &out)?;
            let reports = [report];
            write_reports(&reports, &out).map_err(anyhow::Error::from)?;
            print_summary(&reports);
            Ok(())
        }
        Cmd::Matrix {
            scenario,
            seeds,
            modes,
            out,
        } => {
            let sc = load(&scenario)?;
            let mut reports = Vec::new();
            for (cell, res) in run_matrix(&sc, &seeds, &modes) {
                let res = res.map_err(|e| on_run_error(&sc, cell.seed, cell.mode, e, &out))?;
                reports.push(persist(&sc, cell.seed, cell.mode, &res, &out)?);
            }
            write_reports(&reports, &out).map_err(anyhow::Error::from)?;
            print_summary(&reports);
            Ok(())
        }
        Cmd::Report { traces, out } => {
            let mut reports = Vec::new();
            for p in traces {
                let f = File::open(&p).with_context(|| p.display().to_string())?;
                let lines =
                    read_jsonl(BufReader::new(f)).with_context(|| p.display().to_string())?;
                reports.push(report_from_trace(&lines).with_context(|| p.display().to_string())?);
            }
            write_reports(&reports, &out).map_err(anyhow::Error::from)?;
            print_summary(&reports);
            Ok(())
        }
    }
}
