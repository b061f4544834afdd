//! Kills the source node mid-task and resumes from the rendezvous checkpoint.
//!
//! cargo run --example rendezvous_recovery

use waan::trace::{events, EventBody};
use waan::{load_scenario, report_from_trace, run, Mode};

fn main() -> anyhow::Result<()> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/recovery.scenario"
    );
    let sc = load_scenario(path)?;
    let out = run(&sc, 1, Mode::Waan)?;
    for e in events(&out.trace) {
        let line = match &e.body {
            EventBody::CheckpointStored {
                store, package_id, ..
            } => {
                format!("checkpoint {package_id} stored on {store}")
            }
            EventBody::FaultInjected { node, action } => format!("fault: {action:?} on {node}"),
            EventBody::SessionDropped {
                node,
                lost_units,
                reason,
                ..
            } => {
                format!(
                    "session on {node} dropped ({reason:?}), {lost_units} units since checkpoint"
                )
            }
            EventBody::RecoveryFetch {
                store, target, hit, ..
            } => {
                let to = target.map_or("no host".into(), |n| n.to_string());
                format!("fetch from {store} for {to}, hit {hit}")
            }
            EventBody::SessionResumed { node, state, .. } => {
                format!(
                    "resumed on {node} at {} executed units",
                    state.executed_units
                )
            }
            EventBody::ResultDelivered {
                completion_time, ..
            } => {
                format!("result delivered after {completion_time} ms")
            }
            _ => continue,
        };
        println!("{:>6} ms  {line}", e.t);
    }
    let r = report_from_trace(&out.trace)?;
    println!(
        "work {} units, executed {}, recomputed {}",
        r.intents[0].work_units,
        r.executed_units(),
        r.recomputed_units()
    );
    for (node, store) in &out.stores {
        println!("audit log of {node}:");
        for rec in store.audit_export() {
            println!("  {:>6} ms {:?} by {}", rec.at, rec.action, rec.actor);
        }
    }
    Ok(())
}
