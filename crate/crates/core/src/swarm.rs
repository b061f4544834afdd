//! Tiny-agent swarm: neighbor discovery, metric collection and candidate ranking.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    NodeId, NodeMetrics, NodeProfile, Position, RankingWeights, SimTime, TrafficType,
};
use crate::kernel::mobility::residence_time;
use crate::kernel::radio::{nodes_in_range, RadioModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwarmError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("normalization bounds for {0} must be finite with min < max")]
    BadBounds(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwarmQuery {
    pub query_id: u64,
    pub origin_node: NodeId,
    pub candidate_set: Vec<NodeId>,
    pub issued_at: SimTime,
    pub deadline: u64,
}

/// Per-metric values scaled to [0, 1]; same order as [`RankingWeights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub bandwidth: f64,
    pub cpu_headroom: f64,
    pub mem_headroom: f64,
    pub snr: f64,
    pub residence: f64,
    pub traffic_match: f64,
}

impl Components {
    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            bandwidth: a[0],
            cpu_headroom: a[1],
            mem_headroom: a[2],
            snr: a[3],
            residence: a[4],
            traffic_match: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.bandwidth,
            self.cpu_headroom,
            self.mem_headroom,
            self.snr,
            self.residence,
            self.traffic_match,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub node_id: NodeId,
    pub score: f64,
    pub components: Components,
    pub metrics_staleness: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationBounds {
    /// bits/s
    pub bandwidth: [f64; 2],
    /// dB
    pub snr: [f64; 2],
    /// seconds
    pub residence: [f64; 2],
}

impl Default for NormalizationBounds {
    fn default() -> Self {
        Self {
            bandwidth: [0.0, 10e6],
            snr: [0.0, 40.0],
            residence: [0.0, 60.0],
        }
    }
}

impl NormalizationBounds {
    pub fn validate(&self) -> Result<(), SwarmError> {
        for (name, [lo, hi]) in [
            ("bandwidth", self.bandwidth),
            ("snr", self.snr),
            ("residence", self.residence),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SwarmError::BadBounds(name));
            }
        }
        Ok(())
    }
}

fn min_max(v: f64, [lo, hi]: [f64; 2]) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// What the querying agent knows about the user it is serving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserState {
    pub position: Position,
    /// m/s
    pub velocity: (f64, f64),
    pub traffic_type: TrafficType,
}

/// Coverage disc of a candidate as seen by the user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageDisc {
    pub center: Position,
    pub radius: f64,
}

/// Nodes reachable from `node` over a node-to-node link, excluding itself,
/// sorted by id. The reachability boundary is closed.
pub fn discover_neighbors(
    node: NodeId,
    topology: &[NodeProfile],
    radio: &RadioModel,
) -> Result<Vec<NodeId>, SwarmError> {
    let me = topology
        .iter()
        .find(|n| n.node_id == node)
        .ok_or(SwarmError::UnknownNode(node))?;
    let mut out: Vec<NodeId> = topology
        .iter()
        .filter(|n| n.node_id != node && nodes_in_range(radio, me, n))
        .map(|n| n.node_id)
        .collect();
    out.sort();
    Ok(out)
}

/// The world as seen from a swarm query.
pub trait MetricEnv {
    /// Whether a request from `from` can reach `to` right now.
    fn reachable(&self, from: NodeId, to: NodeId) -> bool;
    /// Metrics of `node`, stamped as sampled at `at`.
    fn sample(&self, node: NodeId, at: SimTime) -> NodeMetrics;
    fn base_latency(&self) -> u64;
    /// Upper bound (inclusive) of the uniform per-reply jitter, ms.
    fn jitter_max(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReply {
    pub metrics: NodeMetrics,
    pub arrives_at: SimTime,
}

/// Issues the query to every candidate. A reachable candidate samples on
/// request arrival and replies after `2 * latency + jitter`; replies that
/// would land after the deadline, and unreachable candidates, are omitted.
pub fn collect_metrics<E: MetricEnv, R: Rng>(
    query: &SwarmQuery,
    env: &E,
    jitter: &mut R,
) -> Vec<MetricReply> {
    let lat = env.base_latency();
    let mut out = Vec::new();
    for &c in &query.candidate_set {
        // jitter is drawn for every candidate so the stream does not depend on reachability
        let j = if env.jitter_max() > 0 {
            jitter.random_range(0..=env.jitter_max())
        } else {
            0
        };
        if !env.reachable(query.origin_node, c) {
            continue;
        }
        let delay = 2 * lat + j;
        if delay > query.deadline {
            continue;
        }
        out.push(MetricReply {
            metrics: env.sample(c, query.issued_at + lat),
            arrives_at: query.issued_at + delay,
        });
    }
    out
}

/// Drops replies older than `staleness_max` at `now`.
pub fn discard_stale(
    metrics: Vec<NodeMetrics>,
    now: SimTime,
    staleness_max: u64,
) -> Vec<NodeMetrics> {
    metrics
        .into_iter()
        .filter(|m| m.staleness(now).is_some_and(|s| s <= staleness_max))
        .collect()
}

pub fn normalize_metrics(
    m: &NodeMetrics,
    user: &UserState,
    disc: CoverageDisc,
    bounds: &NormalizationBounds,
) -> Result<Components, SwarmError> {
    bounds.validate()?;
    let residence = residence_time(user.position, user.velocity, disc.center, disc.radius);
    Ok(Components {
        bandwidth: min_max(m.bandwidth_avail, bounds.bandwidth),
        cpu_headroom: (1.0 - m.cpu_load).clamp(0.0, 1.0),
        mem_headroom: (1.0 - m.mem_used).clamp(0.0, 1.0),
        snr: min_max(m.snr, bounds.snr),
        residence: if residence.is_infinite() {
            1.0
        } else {
            min_max(residence, bounds.residence)
        },
        traffic_match: if m.traffic_type == user.traffic_type {
            1.0
        } else {
            0.0
        },
    })
}

/// Weighted sum of components with already-canonical weights.
pub fn score(components: &Components, weights: &RankingWeights) -> f64 {
    weights
        .to_array()
        .iter()
        .zip(components.to_array())
        .map(|(w, c)| w * c)
        .sum()
}

/// Descending by score; ties by higher bandwidth component, then lower node id.
pub fn rank_candidates(
    inputs: &[(NodeMetrics, Components)],
    weights: &RankingWeights,
    now: SimTime,
) -> Vec<CandidateScore> {
    let w = weights
        .canonical()
        .unwrap_or_else(|_| RankingWeights::uniform());
    let mut out: Vec<CandidateScore> = inputs
        .iter()
        .map(|(m, c)| CandidateScore {
            node_id: m.node_id,
            score: score(c, &w),
            components: *c,
            metrics_staleness: m.staleness(now).unwrap_or(0),
        })
        .collect();
    out.sort_by(candidate_order);
    out
}

fn candidate_order(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            b.components
                .bandwidth
                .partial_cmp(&a.components.bandwidth)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.node_id.cmp(&b.node_id))
}
