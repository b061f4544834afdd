//! The primary target dies as the package is sent; the next ranked node takes over.
//!
//! cargo run --example fallback

use waan::trace::{events, EventBody};
use waan::{load_scenario, run, Mode};

fn main() -> anyhow::Result<()> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/fallback.scenario"
    );
    let sc = load_scenario(path)?;
    let out = run(&sc, 1, Mode::Waan)?;
    for e in events(&out.trace) {
        let line = match &e.body {
            EventBody::CandidatesRanked { ranking, .. } => {
                let ids: Vec<String> = ranking
                    .iter()
                    .map(|c| format!("{} ({:.3})", c.node_id, c.score))
                    .collect();
                format!("ranked {}", ids.join(", "))
            }
            EventBody::FaultInjected { node, action } => format!("fault: {action:?} on {node}"),
            EventBody::PackageSent { to, attempt, .. } => {
                format!("attempt {attempt}: package to {to}")
            }
            EventBody::PackageLost { to, .. } => format!("package to {to} lost"),
            EventBody::AckTimeout { target, .. } => format!("no ack from {target}"),
            EventBody::HandoverOutcome { outcome } => format!(
                "{:?} on {} after {} attempts, {} units recomputed",
                outcome.result, outcome.target, outcome.attempt_index, outcome.recomputed_units
            ),
            _ => continue,
        };
        println!("{:>6} ms  {line}", e.t);
    }
    Ok(())
}
