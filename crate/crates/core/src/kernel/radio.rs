//! Log-distance path loss and the link abstraction built on it.

use serde::{Deserialize, Serialize};

use crate::domain::{NodeProfile, Position};

/// Boundary tolerance for threshold comparisons, in dB.
const RSSI_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioModel {
    /// dBm
    pub tx_power: f64,
    pub pathloss_exponent: f64,
    /// meters
    pub ref_distance: f64,
    /// dB of loss at `ref_distance`
    pub ref_loss: f64,
    /// dBm
    pub noise_floor: f64,
    /// dBm
    pub connect_threshold_rssi: f64,
    /// ms added to every message
    pub base_link_latency: u64,
    /// Standard deviation of the static per-link shadowing term, dB. 0 disables it.
    #[serde(default)]
    pub shadowing_sigma: f64,
}

impl RadioModel {
    /// Received power at distance `d`; distances under `ref_distance` clamp to it.
    pub fn rssi(&self, d: f64) -> f64 {
        let d = d.max(self.ref_distance);
        self.tx_power
            - (self.ref_loss + 10.0 * self.pathloss_exponent * (d / self.ref_distance).log10())
    }

    pub fn snr(&self, d: f64) -> f64 {
        self.rssi(d) - self.noise_floor
    }

    /// Largest distance at which `rssi + offset` still meets the connect threshold.
    /// Zero if even the reference distance falls short.
    pub fn link_budget_range(&self, offset_db: f64) -> f64 {
        let margin = self.tx_power + offset_db - self.ref_loss - self.connect_threshold_rssi;
        if margin < -RSSI_EPS {
            return 0.0;
        }
        self.ref_distance * 10f64.powf(margin.max(0.0) / (10.0 * self.pathloss_exponent))
    }

    /// `rssi(d) + offset >= threshold`, boundary inclusive.
    pub fn meets_threshold(&self, d: f64, offset_db: f64) -> bool {
        self.rssi(d) + offset_db >= self.connect_threshold_rssi - RSSI_EPS
    }

    /// Radius of the disc in which a user is connected to `node`.
    pub fn effective_radius(&self, node: &NodeProfile, offset_db: f64) -> f64 {
        if !self.meets_threshold(0.0, offset_db) {
            return 0.0;
        }
        node.coverage_radius.min(self.link_budget_range(offset_db))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0) {
            v.push("radio.pathloss_exponent: must be > 0".to_string());
        }
        if !(self.ref_distance.is_finite() && self.ref_distance > 0.0) {
            v.push("radio.ref_distance: must be > 0".to_string());
        }
        if self.connect_threshold_rssi <= self.noise_floor {
            v.push("radio.connect_threshold_rssi: must exceed noise_floor".to_string());
        }
        if !(self.shadowing_sigma.is_finite() && self.shadowing_sigma >= 0.0) {
            v.push("radio.shadowing_sigma: must be >= 0".to_string());
        }
        v
    }
}

/// True iff the user is inside the node's coverage radius and hears it above threshold.
pub fn connected(model: &RadioModel, user_pos: Position, node: &NodeProfile) -> bool {
    connected_with_offset(model, user_pos, node, 0.0)
}

pub fn connected_with_offset(
    model: &RadioModel,
    user_pos: Position,
    node: &NodeProfile,
    offset_db: f64,
) -> bool {
    let d = user_pos.distance(&node.position);
    d <= node.coverage_radius && model.meets_threshold(d, offset_db)
}

/// Node-to-node reachability by link budget alone (closed boundary).
pub fn nodes_in_range(model: &RadioModel, a: &NodeProfile, b: &NodeProfile) -> bool {
    model.meets_threshold(a.position.distance(&b.position), 0.0)
}

/// Milliseconds to move `bytes` over the slower of two endpoints, plus link latency.
pub fn transfer_time(bytes: u64, src_bw: f64, dst_bw: f64, model: &RadioModel) -> u64 {
    let bw = src_bw.min(dst_bw);
    debug_assert!(bw > 0.0, "bandwidths must be positive");
    if bytes == 0 {
        return model.base_link_latency;
    }
    let ms = (8.0 * bytes as f64 * 1000.0) / bw;
    (ms - 1e-9).ceil().max(0.0) as u64 + model.base_link_latency
}
