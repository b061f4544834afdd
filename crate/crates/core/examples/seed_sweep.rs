//! Runs the grid scenario over several seeds in both modes, in parallel.
//!
//! cargo run --release --example seed_sweep

use waan::report::{comparative, summarize};
use waan::{load_scenario, report_from_trace, run_matrix, Mode};

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/grid.scenario");
    let sc = load_scenario(path)?;
    let seeds: Vec<u64> = (1..=8).collect();
    let mut reports = Vec::new();
    for (_, res) in run_matrix(&sc, &seeds, &[Mode::Waan, Mode::Baseline]) {
        reports.push(report_from_trace(&res?.trace)?);
    }
    println!("seed intent  waan exec  base exec  waan done  base done");
    for r in comparative(&reports) {
        let t = |v: Option<u64>| v.map_or("-".into(), |t| t.to_string());
        println!(
            "{:>4} {:>6} {:>10} {:>10} {:>10} {:>10}",
            r.seed,
            r.intent.0,
            r.waan_executed,
            r.baseline_executed,
            t(r.waan_completion),
            t(r.baseline_completion)
        );
    }
    for (mode, s) in summarize(&reports) {
        println!(
            "{mode}: executed {} recomputed {} handovers {}",
            s.executed_units, s.recomputed_units, s.handovers
        );
    }
    Ok(())
}
