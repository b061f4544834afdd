//! Outcome feedback: weight drift, few-shot priors and the transfer-kind choice.
//!
//! cargo run --example learning

use waan::adapt::{
    decide_transfer_kind, AdaptState, BucketKey, OutcomeContext, SpeedBand, TransferCostInputs,
    DEFAULT_ETA, DEFAULT_K_MIN,
};
use waan::domain::{CapabilityClass, IntentId, NodeId, RankingWeights, TrafficType};
use waan::handover::{HandoverOutcome, HandoverResult, TransferKind};
use waan::swarm::Components;

fn outcome(i: u64, result: HandoverResult) -> HandoverOutcome {
    HandoverOutcome {
        intent_id: IntentId(i),
        source: NodeId(1),
        target: NodeId(2),
        attempt_index: 1,
        started_at: i * 1000,
        finished_at: i * 1000 + 50,
        result,
        transfer_kind: TransferKind::StateTransfer,
        progress_at_transfer: 0.5,
        recomputed_units: 0,
    }
}

fn main() {
    let key = BucketKey {
        traffic_type: TrafficType::Interactive,
        speed_band: SpeedBand::of(1.4),
        capability_class: CapabilityClass::EdgeNode,
    };
    let chosen = Components::from_array([1.0, 0.2, 0.3, 0.4, 0.2, 1.0]);
    let mut agent = AdaptState::new(RankingWeights::uniform(), DEFAULT_ETA, DEFAULT_K_MIN);
    let radio = waan::kernel::radio::RadioModel {
        tx_power: 20.0,
        pathloss_exponent: 3.0,
        ref_distance: 1.0,
        ref_loss: 40.0,
        noise_floor: -95.0,
        connect_threshold_rssi: -85.0,
        base_link_latency: 5,
        shadowing_sigma: 0.0,
    };
    let inputs = TransferCostInputs {
        state_bytes: 30_000,
        input_bytes: 80_000,
        executed_units: 8,
        quantum_ms: 100,
        src_bandwidth: 1e6,
        dst_bandwidth: 2e6,
        radio: &radio,
    };
    println!("step  w_bandwidth  prior  choice");
    for i in 1..=8 {
        agent.absorb(
            outcome(i, HandoverResult::Abort),
            OutcomeContext {
                bucket: key,
                chosen: Some(chosen),
                qoe_met: false,
                completion_latency: None,
            },
        );
        let d = decide_transfer_kind(&agent.log, &inputs, &key, agent.k_min);
        println!(
            "{i:>4}  {:>11.4}  {:.3}  {:?}",
            agent.weights.w_bandwidth, d.prior, d.kind
        );
    }
}
