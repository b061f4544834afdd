//! Walks the pedestrian case study in both modes and compares the outcomes.
//!
//! cargo run --example casestudy

use waan::trace::{events, EventBody};
use waan::{load_scenario, report_from_trace, run, Mode};

fn main() -> anyhow::Result<()> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/casestudy.scenario"
    );
    let sc = load_scenario(path)?;
    let mut done = Vec::new();
    for mode in [Mode::Waan, Mode::Baseline] {
        let out = run(&sc, 1, mode)?;
        println!("== {mode}");
        for e in events(&out.trace) {
            let line = match &e.body {
                EventBody::HandoverTriggered {
                    predicted_exit,
                    progress,
                    ..
                } => {
                    format!("trigger, exit predicted at {predicted_exit} ms, progress {progress}")
                }
                EventBody::TransferDecision { decision, .. } => format!(
                    "decision {:?}: state cost {} vs full cost {}",
                    decision.kind, decision.state_cost, decision.full_cost
                ),
                EventBody::PackageSent {
                    to,
                    package,
                    arrives_at,
                    ..
                } => {
                    format!(
                        "package {} B to {to}, arrives {arrives_at}",
                        package.size_bytes
                    )
                }
                EventBody::HandoverOutcome { outcome } => {
                    format!("outcome {:?} on {}", outcome.result, outcome.target)
                }
                EventBody::SessionDropped {
                    node, lost_units, ..
                } => {
                    format!("session on {node} dropped, {lost_units} units lost")
                }
                EventBody::IntentDispatched {
                    node,
                    resubmission: true,
                    ..
                } => {
                    format!("resubmitted to {node}")
                }
                EventBody::ResultDelivered {
                    completion_time, ..
                } => {
                    format!("result delivered, {completion_time} ms after submission")
                }
                _ => continue,
            };
            println!("{:>6} ms  {line}", e.t);
        }
        let r = report_from_trace(&out.trace)?;
        println!(
            "executed {} units, recomputed {}",
            r.executed_units(),
            r.recomputed_units()
        );
        done.push(r.intents[0].completion_time.unwrap_or(0));
    }
    println!(
        "baseline finishes {} ms later",
        done[1] as i64 - done[0] as i64
    );
    Ok(())
}
