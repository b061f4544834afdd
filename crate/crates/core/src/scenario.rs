//! Scenario files: strict TOML schema, defaults and validation.
//!
//! See `scenarios/SCHEMA.md` for the field reference.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapt::{DEFAULT_ETA, DEFAULT_K_MIN};
use crate::domain::{
    decompose, validate_intent, CapabilityClass, ContextTag, IdGen, IntentTemplate, NodeId,
    NodeProfile, Position, RankingWeights, SimTime, TrafficType, UserId, ZoneId,
};
use crate::kernel::mobility::{Bounds, MobilityPath, Waypoint};
use crate::kernel::radio::RadioModel;
use crate::rendezvous::DEFAULT_CAPACITY;
use crate::swarm::NormalizationBounds;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Waan,
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Waan => "waan",
            Mode::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "waan" => Ok(Mode::Waan),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!(
                "unknown mode `{other}` (expected waan or baseline)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Knobs {
    /// Trigger horizon. `None` derives it per handover from the expected
    /// transfer time (twice) plus the swarm deadline.
    pub t_prepare_ms: Option<u64>,
    pub staleness_max_ms: u64,
    pub checkpoint_every_units: u32,
    pub eta: f64,
    pub few_shot_k_min: u64,
    pub swarm_deadline_ms: u64,
    pub metric_jitter_ms: u64,
    pub tick_ms: u64,
    pub policy_overhead_bytes: u64,
    pub link_params_bytes: usize,
    /// Percentage cut of link latency on the post-handover link.
    pub link_latency_reduction_pct: u8,
    pub rendezvous_capacity: usize,
    /// Independent loss probability per package transmission.
    pub package_loss_prob: f64,
    pub normalization: NormalizationBounds,
    pub initial_weights: RankingWeights,
}

impl Default for Knobs {
    fn default() -> Self {
        Self {
            t_prepare_ms: None,
            staleness_max_ms: 2000,
            checkpoint_every_units: 10,
            eta: DEFAULT_ETA,
            few_shot_k_min: DEFAULT_K_MIN,
            swarm_deadline_ms: 50,
            metric_jitter_ms: 0,
            tick_ms: 100,
            policy_overhead_bytes: 200,
            link_params_bytes: 64,
            link_latency_reduction_pct: 0,
            rendezvous_capacity: DEFAULT_CAPACITY,
            package_loss_prob: 0.0,
            normalization: NormalizationBounds::default(),
            initial_weights: RankingWeights::uniform(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub id: ZoneId,
    #[serde(default)]
    pub name: String,
    pub min: Position,
    pub max: Position,
}

fn default_mem() -> u64 {
    1 << 30
}
fn default_cpu_load() -> f64 {
    0.2
}
fn default_mem_used() -> f64 {
    0.3
}
fn default_traffic() -> TrafficType {
    TrafficType::Interactive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default)]
    pub name: String,
    pub position: Position,
    pub coverage_radius: f64,
    pub capability: CapabilityClass,
    /// Work units per second; `1000 / cpu_capacity` must be whole milliseconds.
    pub cpu_capacity: f64,
    #[serde(default = "default_mem")]
    pub mem_capacity: u64,
    #[serde(default)]
    pub rendezvous: bool,
    /// bits/s
    pub bandwidth: f64,
    #[serde(default = "default_cpu_load")]
    pub cpu_load: f64,
    #[serde(default = "default_mem_used")]
    pub mem_used: f64,
    #[serde(default = "default_traffic")]
    pub traffic_type: TrafficType,
}

impl NodeSpec {
    pub fn profile(&self) -> NodeProfile {
        NodeProfile {
            node_id: self.id,
            position: self.position,
            coverage_radius: self.coverage_radius,
            capability_class: self.capability,
            cpu_capacity: self.cpu_capacity,
            mem_capacity: self.mem_capacity,
            is_rendezvous: self.rendezvous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilitySpec {
    Scripted {
        waypoints: Vec<Waypoint>,
    },
    RandomWaypoint {
        speed_min: f64,
        speed_max: f64,
        #[serde(default)]
        bounds: Option<Bounds>,
        #[serde(default)]
        pause_ms: u64,
        #[serde(default)]
        start_at: SimTime,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: UserId,
    pub submit_at: SimTime,
    pub mobility: MobilitySpec,
    pub intent: IntentTemplate,
    /// Times at which the user revises the intent (bumps its version).
    #[serde(default)]
    pub revisions_at: Vec<SimTime>,
}

impl UserSpec {
    pub fn version_at(&self, t: SimTime) -> u32 {
        self.revisions_at.iter().filter(|r| **r <= t).count() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    LinkDown,
    LinkUp,
    NodeDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    pub at: SimTime,
    pub node: NodeId,
    pub action: FaultAction,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub world: Bounds,
    pub end_time: SimTime,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub radio: RadioModel,
    #[serde(default)]
    pub knobs: Knobs,
    #[serde(default)]
    pub zones: Vec<ZoneSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub faults: Vec<FaultInjection>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario invalid:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

impl Scenario {
    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn profiles(&self) -> Vec<NodeProfile> {
        self.nodes.iter().map(NodeSpec::profile).collect()
    }

    /// First declared zone containing `p`; zone 0 when none does.
    pub fn zone_of(&self, p: &Position) -> ZoneId {
        self.zones
            .iter()
            .find(|z| p.x >= z.min.x && p.x <= z.max.x && p.y >= z.min.y && p.y <= z.max.y)
            .map_or(ZoneId(0), |z| z.id)
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.world.is_valid() {
            v.push("world: min must be below max on both axes".into());
        }
        if self.end_time == 0 {
            v.push("end_time: must be > 0".into());
        }
        v.extend(self.radio.validate());

        let k = &self.knobs;
        if k.tick_ms == 0 {
            v.push("knobs.tick_ms: must be > 0".into());
        }
        if k.checkpoint_every_units == 0 {
            v.push("knobs.checkpoint_every_units: must be >= 1".into());
        }
        if !(k.eta.is_finite() && k.eta >= 0.0) {
            v.push("knobs.eta: must be >= 0".into());
        }
        if k.few_shot_k_min == 0 {
            v.push("knobs.few_shot_k_min: must be >= 1".into());
        }
        if k.link_latency_reduction_pct > 100 {
            v.push("knobs.link_latency_reduction_pct: must be <= 100".into());
        }
        if k.rendezvous_capacity == 0 {
            v.push("knobs.rendezvous_capacity: must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&k.package_loss_prob) {
            v.push("knobs.package_loss_prob: must be in [0, 1]".into());
        }
        if let Err(e) = k.normalization.validate() {
            v.push(format!("knobs.normalization: {e}"));
        }
        if let Err(e) = k.initial_weights.validate() {
            v.push(format!("knobs.initial_weights: {e}"));
        }

        let mut zone_ids = BTreeSet::new();
        for z in &self.zones {
            if z.id == ZoneId(0) {
                v.push("zones: id 0 is reserved for 'no zone'".into());
            }
            if !zone_ids.insert(z.id) {
                v.push(format!("zones: duplicate id {}", z.id.0));
            }
        }

        let mut node_ids = BTreeSet::new();
        for n in &self.nodes {
            let f = format!("nodes[{}]", n.id.0);
            if !node_ids.insert(n.id) {
                v.push(format!("{f}: duplicate node id"));
            }
            if !(n.coverage_radius.is_finite() && n.coverage_radius > 0.0) {
                v.push(format!("{f}.coverage_radius: must be > 0"));
            }
            if n.profile().quantum_ms().is_none() {
                v.push(format!(
                    "{f}.cpu_capacity: must be > 0 with 1000/cpu_capacity a whole number of ms"
                ));
            }
            if !(n.bandwidth.is_finite() && n.bandwidth > 0.0) {
                v.push(format!("{f}.bandwidth: must be > 0"));
            }
            if !(0.0..=1.0).contains(&n.cpu_load) {
                v.push(format!("{f}.cpu_load: must be in [0, 1]"));
            }
            if !(0.0..=1.0).contains(&n.mem_used) {
                v.push(format!("{f}.mem_used: must be in [0, 1]"));
            }
            if !self.world.contains(&n.position) {
                v.push(format!("{f}.position: outside world bounds"));
            }
        }

        let mut user_ids = BTreeSet::new();
        for u in &self.users {
            let f = format!("users[{}]", u.id.0);
            if !user_ids.insert(u.id) {
                v.push(format!("{f}: duplicate user id"));
            }
            if u.submit_at >= self.end_time {
                v.push(format!("{f}.submit_at: must be before end_time"));
            }
            match &u.mobility {
                MobilitySpec::Scripted { waypoints } => {
                    let path = MobilityPath::scripted(u.id, waypoints.clone());
                    v.extend(
                        path.violations(&self.world)
                            .into_iter()
                            .map(|e| format!("{f}.mobility.{e}")),
                    );
                }
                MobilitySpec::RandomWaypoint {
                    speed_min,
                    speed_max,
                    bounds,
                    ..
                } => {
                    if !(speed_min.is_finite() && *speed_min > 0.0 && speed_max >= speed_min) {
                        v.push(format!("{f}.mobility: need 0 < speed_min <= speed_max"));
                    }
                    if let Some(b) = bounds {
                        if !b.is_valid()
                            || !self.world.contains(&b.min)
                            || !self.world.contains(&b.max)
                        {
                            v.push(format!("{f}.mobility.bounds: must lie inside the world"));
                        }
                    }
                }
            }
            let mut ids = IdGen::new();
            let ctx = ContextTag {
                zone: ZoneId(0),
                intent_version: 0,
            };
            match decompose(&u.intent, u.id, u.submit_at, ctx, &mut ids) {
                Ok(intent) => {
                    if let Err(errs) = validate_intent(&intent) {
                        v.extend(errs.into_iter().map(|e| format!("{f}.intent.{e}")));
                    }
                }
                Err(e) => v.push(format!("{f}.intent: {e}")),
            }
            if let Some(z) = u.intent.context_zone {
                if !zone_ids.contains(&z) {
                    v.push(format!("{f}.intent.context_zone: unknown zone {}", z.0));
                }
            }
        }

        for (i, fi) in self.faults.iter().enumerate() {
            if !node_ids.contains(&fi.node) {
                v.push(format!("faults[{i}].node: unknown node {}", fi.node.0));
            }
            if fi.at > self.end_time {
                v.push(format!("faults[{i}].at: must be within [0, end_time]"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(v))
        }
    }
}

/// Parses scenario text without validating it.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        ScenarioError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let sc = parse_scenario(&text)?;
    sc.validate()?;
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
end_time = 10000
world = { min = { x = 0.0, y = 0.0 }, max = { x = 100.0, y = 100.0 } }

[radio]
tx_power = 20.0
pathloss_exponent = 3.0
ref_distance = 1.0
ref_loss = 40.0
noise_floor = -95.0
connect_threshold_rssi = -85.0
base_link_latency = 5

[[nodes]]
id = 1
position = { x = 10.0, y = 10.0 }
coverage_radius = 50.0
capability = "edge_node"
cpu_capacity = 10.0
bandwidth = 1e6

[[users]]
id = 1
submit_at = 500
mobility = { mode = "scripted", waypoints = [ { at = 0, position = { x = 10.0, y = 10.0 } } ] }

[users.intent]
max_latency_ms = 20000
traffic_type = "interactive"
time_budget_ms = 60000
relevance_threshold = 0.5
subtasks = [ { kind = "generic", work_units = 10 } ]
"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let sc = parse_scenario(MINIMAL).unwrap();
        sc.validate().unwrap();
        assert_eq!(sc.knobs.checkpoint_every_units, 10);
        assert_eq!(sc.knobs.staleness_max_ms, 2000);
        assert_eq!(sc.mode, Mode::Waan);
        assert_eq!(sc.seeds, vec![1]);
        assert_eq!(sc.nodes[0].cpu_load, 0.2);
    }

    #[test]
    fn unknown_field_names_the_field() {
        let text = MINIMAL.replace(
            "base_link_latency = 5",
            "base_link_latency = 5\nbase_latnecy = 3",
        );
        match parse_scenario(&text) {
            Err(ScenarioError::Parse { line, message, .. }) => {
                assert!(message.contains("base_latnecy"), "{message}");
                assert!(line > 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn end_before_submit_is_invalid() {
        let text = MINIMAL.replace("end_time = 10000", "end_time = 400");
        let sc = parse_scenario(&text).unwrap();
        match sc.validate() {
            Err(ScenarioError::Validation(v)) => {
                assert!(v.iter().any(|e| e.contains("submit_at")), "{v:?}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn reports_all_violations() {
        let text = MINIMAL
            .replace("cpu_capacity = 10.0", "cpu_capacity = 3.0")
            .replace("coverage_radius = 50.0", "coverage_radius = -1.0");
        let v = parse_scenario(&text).unwrap().violations();
        assert!(v.iter().any(|e| e.contains("cpu_capacity")));
        assert!(v.iter().any(|e| e.contains("coverage_radius")));
    }

    #[test]
    fn hash_tracks_effective_config() {
        let a = parse_scenario(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.knobs.eta = 0.2;
        assert_ne!(a.hash(), b.hash());
    }
}
