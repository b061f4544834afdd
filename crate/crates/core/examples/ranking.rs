//! Scores three handover candidates under two weightings.
//!
//! cargo run --example ranking

use waan::domain::{NodeId, NodeMetrics, Position, RankingWeights, TrafficType};
use waan::swarm::{
    normalize_metrics, rank_candidates, CoverageDisc, NormalizationBounds, UserState,
};

fn metrics(
    id: u32,
    bandwidth: f64,
    cpu_load: f64,
    snr: f64,
    traffic_type: TrafficType,
) -> NodeMetrics {
    NodeMetrics {
        node_id: NodeId(id),
        sampled_at: 0,
        cpu_load,
        mem_used: 0.3,
        bandwidth_avail: bandwidth,
        rssi: snr - 95.0,
        snr,
        mobility_speed: 1.5,
        traffic_type,
    }
}

fn main() -> anyhow::Result<()> {
    let user = UserState {
        position: Position::new(40.0, 0.0),
        velocity: (1.5, 0.0),
        traffic_type: TrafficType::Interactive,
    };
    let bounds = NormalizationBounds::default();
    // fast but busy, idle but narrow, and one the user walks towards
    let nodes = [
        (
            metrics(1, 8e6, 0.9, 30.0, TrafficType::Bulk),
            Position::new(30.0, 10.0),
        ),
        (
            metrics(2, 1e6, 0.1, 20.0, TrafficType::Interactive),
            Position::new(50.0, -20.0),
        ),
        (
            metrics(3, 4e6, 0.4, 25.0, TrafficType::Interactive),
            Position::new(90.0, 0.0),
        ),
    ];
    let mut inputs = Vec::new();
    for (m, center) in nodes {
        let c = normalize_metrics(
            &m,
            &user,
            CoverageDisc {
                center,
                radius: 60.0,
            },
            &bounds,
        )?;
        inputs.push((m, c));
    }
    let weightings = [
        ("uniform", RankingWeights::uniform()),
        (
            "bandwidth first",
            RankingWeights::from_array([4.0, 1.0, 1.0, 1.0, 1.0, 0.0]),
        ),
    ];
    for (name, w) in weightings {
        println!("{name}:");
        for c in rank_candidates(&inputs, &w, 0) {
            println!(
                "  {} score {:.3}  bw {:.2} cpu {:.2} snr {:.2} residence {:.2} match {}",
                c.node_id,
                c.score,
                c.components.bandwidth,
                c.components.cpu_headroom,
                c.components.snr,
                c.components.residence,
                c.components.traffic_match
            );
        }
    }
    Ok(())
}
