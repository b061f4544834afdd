//! Outcome feedback: historical logs, multiplicative-weights adaptation of the
//! ranking weights, context-bucketed few-shot priors and the choice between
//! shipping intermediate state and re-offloading from scratch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{CapabilityClass, CausalityStats, RankingWeights, TrafficType};
use crate::handover::{HandoverOutcome, TransferKind};
use crate::kernel::radio::{transfer_time, RadioModel};
use crate::swarm::Components;

pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_K_MIN: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedBand {
    Slow,
    Medium,
    Fast,
}

impl SpeedBand {
    /// slow < 1 m/s <= medium <= 5 m/s < fast
    pub fn of(speed: f64) -> Self {
        if speed < 1.0 {
            SpeedBand::Slow
        } else if speed <= 5.0 {
            SpeedBand::Medium
        } else {
            SpeedBand::Fast
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub traffic_type: TrafficType,
    pub speed_band: SpeedBand,
    pub capability_class: CapabilityClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketStats {
    pub successes: u64,
    pub failures: u64,
    /// Mean end-to-end latency of intents whose outcome landed here, ms.
    pub mean_completion_latency: f64,
    /// Outcomes that contributed to the latency mean.
    pub latency_samples: u64,
}

impl BucketStats {
    pub fn total(&self) -> u64 {
        self.successes + self.failures
    }
}

/// Context attached to an outcome when it is logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeContext {
    pub bucket: BucketKey,
    /// Ranking components of the node that was chosen, when a ranking was involved.
    pub chosen: Option<Components>,
    pub qoe_met: bool,
    pub completion_latency: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub outcome: HandoverOutcome,
    pub context: OutcomeContext,
}

/// Outcome history of one agent. Records are never modified or removed and
/// are kept ordered by `finished_at`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeLog {
    records: Vec<OutcomeRecord>,
    buckets: BTreeMap<BucketKey, BucketStats>,
}

impl OutcomeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[OutcomeRecord] {
        &self.records
    }

    pub fn bucket(&self, key: &BucketKey) -> Option<&BucketStats> {
        self.buckets.get(key)
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&BucketKey, &BucketStats)> {
        self.buckets.iter()
    }

    pub fn global(&self) -> CausalityStats {
        self.buckets
            .values()
            .fold(CausalityStats::default(), |acc, b| CausalityStats {
                successes: acc.successes + b.successes,
                failures: acc.failures + b.failures,
            })
    }
}

/// A "good" outcome: the handover succeeded and the intent met its QoE.
fn is_positive(outcome: &HandoverOutcome, ctx: &OutcomeContext) -> bool {
    outcome.succeeded() && ctx.qoe_met
}

pub fn record_outcome(log: &mut OutcomeLog, outcome: HandoverOutcome, context: OutcomeContext) {
    let stats = log.buckets.entry(context.bucket).or_default();
    if is_positive(&outcome, &context) {
        stats.successes += 1;
    } else {
        stats.failures += 1;
    }
    if let Some(lat) = context.completion_latency {
        stats.latency_samples += 1;
        let n = stats.latency_samples as f64;
        stats.mean_completion_latency += (lat as f64 - stats.mean_completion_latency) / n;
    }
    let at = log
        .records
        .partition_point(|r| r.outcome.finished_at <= outcome.finished_at);
    log.records.insert(at, OutcomeRecord { outcome, context });
}

/// `w_i <- w_i * exp(eta * sign * c_i)`, renormalized to sum 1.
pub fn update_weights(
    weights: &RankingWeights,
    positive: bool,
    chosen: &Components,
    eta: f64,
) -> RankingWeights {
    let sign = if positive { 1.0 } else { -1.0 };
    let w = weights.to_array();
    let c = chosen.to_array();
    let mut next = [0.0; 6];
    for i in 0..6 {
        next[i] = w[i] * (eta * sign * c[i]).exp();
    }
    RankingWeights::from_array(next)
        .canonical()
        .unwrap_or(*weights)
}

/// Applies one logged outcome to `weights`; outcomes without a ranking leave them alone.
pub fn learn(weights: &RankingWeights, record: &OutcomeRecord, eta: f64) -> RankingWeights {
    match &record.context.chosen {
        Some(c) => update_weights(
            weights,
            is_positive(&record.outcome, &record.context),
            c,
            eta,
        ),
        None => *weights,
    }
}

fn laplace(s: u64, f: u64) -> f64 {
    (s as f64 + 1.0) / ((s + f) as f64 + 2.0)
}

/// Laplace-smoothed success rate of the bucket once it holds `k_min` samples.
pub fn few_shot_prior(log: &OutcomeLog, key: &BucketKey, k_min: u64) -> Option<f64> {
    let b = log.bucket(key)?;
    (b.total() >= k_min.max(1)).then(|| laplace(b.successes, b.failures))
}

/// Bucket prior, else the smoothed global rate, else 0.5.
pub fn effective_prior(log: &OutcomeLog, key: &BucketKey, k_min: u64) -> f64 {
    few_shot_prior(log, key, k_min).unwrap_or_else(|| {
        let g = log.global();
        laplace(g.successes, g.failures)
    })
}

/// Inputs for the state-transfer vs full-offload comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCostInputs<'a> {
    pub state_bytes: u64,
    pub input_bytes: u64,
    pub executed_units: u32,
    pub quantum_ms: u64,
    pub src_bandwidth: f64,
    pub dst_bandwidth: f64,
    pub radio: &'a RadioModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferDecision {
    pub kind: TransferKind,
    pub prior: f64,
    pub state_cost: f64,
    pub full_cost: f64,
}

/// Expected cost of each option; the cheaper wins and ties go to state transfer.
///
/// state: transfer(state) / prior
/// full:  transfer(input) + time to redo the executed units
pub fn decide_transfer_kind(
    log: &OutcomeLog,
    inputs: &TransferCostInputs<'_>,
    key: &BucketKey,
    k_min: u64,
) -> TransferDecision {
    let prior = effective_prior(log, key, k_min);
    let xfer =
        |b| transfer_time(b, inputs.src_bandwidth, inputs.dst_bandwidth, inputs.radio) as f64;
    let state_cost = xfer(inputs.state_bytes) / prior;
    let full_cost =
        xfer(inputs.input_bytes) + f64::from(inputs.executed_units) * inputs.quantum_ms as f64;
    TransferDecision {
        kind: choose(state_cost, full_cost),
        prior,
        state_cost,
        full_cost,
    }
}

fn choose(state_cost: f64, full_cost: f64) -> TransferKind {
    if state_cost <= full_cost {
        TransferKind::StateTransfer
    } else {
        TransferKind::FullOffload
    }
}

/// Learning state owned by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    pub weights: RankingWeights,
    pub log: OutcomeLog,
    pub eta: f64,
    pub k_min: u64,
}

impl AdaptState {
    pub fn new(weights: RankingWeights, eta: f64, k_min: u64) -> Self {
        Self {
            weights: weights
                .canonical()
                .unwrap_or_else(|_| RankingWeights::uniform()),
            log: OutcomeLog::new(),
            eta,
            k_min,
        }
    }

    /// Logs the outcome and updates the local weights from it.
    pub fn absorb(&mut self, outcome: HandoverOutcome, context: OutcomeContext) {
        let record = OutcomeRecord { outcome, context };
        self.weights = learn(&self.weights, &record, self.eta);
        record_outcome(&mut self.log, record.outcome, record.context);
    }
}
