//! Value types shared by every part of the simulator.
//!
//! Everything here is an immutable value after construction. Each type
//! serializes to a single JSON object with a stable field order, which is the
//! form used in traces and audit exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in integer milliseconds.
pub type SimTime = u64;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident, $inner:ty, $prefix:literal) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Edge node (agent host or rendezvous point).
    NodeId, u32, "node-"
);
id_type!(UserId, u32, "user-");
id_type!(IntentId, u64, "intent-");
id_type!(SubtaskId, u64, "subtask-");
id_type!(PackageId, u64, "pkg-");
id_type!(ZoneId, u32, "zone-");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    SensorFusion,
    MultimodalSummarization,
    EnvironmentControl,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficType {
    Interactive,
    Bulk,
    Streaming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityClass {
    Microcontroller,
    Smartphone,
    EdgeNode,
    Cloud,
}

impl CapabilityClass {
    /// Maximum number of subtasks a node of this class may host at once.
    pub fn max_hosted(self) -> Option<usize> {
        match self {
            CapabilityClass::Microcontroller => Some(1),
            _ => None,
        }
    }
}

/// Intermediate-state size as an affine function of progress: `base + slope * p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSizeFn {
    pub base: f64,
    pub slope: f64,
}

impl StateSizeFn {
    pub const fn new(base: f64, slope: f64) -> Self {
        Self { base, slope }
    }

    /// Size in bytes at `progress`, rounded to the nearest byte.
    pub fn bytes_at(&self, progress: f64) -> u64 {
        let v = self.base + self.slope * progress;
        if v <= 0.0 {
            0
        } else {
            v.round() as u64
        }
    }

    /// Non-negative on the whole of [0, 1]. Affine, so the endpoints suffice.
    pub fn is_non_negative(&self) -> bool {
        self.base.is_finite()
            && self.slope.is_finite()
            && self.base >= 0.0
            && self.base + self.slope >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub subtask_id: SubtaskId,
    pub kind: SubtaskKind,
    pub work_units: u32,
    pub input_size: u64,
    pub state_size_fn: StateSizeFn,
    pub depends_on: Vec<SubtaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoERequirements {
    pub max_latency: u64,
    pub min_accuracy: f64,
    pub traffic_type: TrafficType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextTag {
    pub zone: ZoneId,
    pub intent_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTtl {
    pub created_at: SimTime,
    pub time_budget: u64,
    pub context_tag: ContextTag,
    pub relevance_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub intent_id: IntentId,
    pub user_id: UserId,
    pub submitted_at: SimTime,
    pub subtasks: Vec<SubTask>,
    pub qoe: QoERequirements,
    pub ttl: SemanticTtl,
}

impl Intent {
    pub fn total_work(&self) -> u64 {
        self.subtasks.iter().map(|s| u64::from(s.work_units)).sum()
    }

    pub fn subtask(&self, id: SubtaskId) -> Option<&SubTask> {
        self.subtasks.iter().find(|s| s.subtask_id == id)
    }

    /// Execution order: Kahn's algorithm, ready subtasks taken in declaration
    /// order. `None` if the dependency graph has a cycle or dangling edge.
    pub fn execution_order(&self) -> Option<Vec<SubtaskId>> {
        let ids: BTreeSet<SubtaskId> = self.subtasks.iter().map(|s| s.subtask_id).collect();
        let mut remaining: Vec<&SubTask> = self.subtasks.iter().collect();
        let mut done = BTreeSet::new();
        let mut order = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let pos = remaining.iter().position(|s| {
                s.depends_on
                    .iter()
                    .all(|d| ids.contains(d) && done.contains(d))
            })?;
            let next = remaining.remove(pos);
            done.insert(next.subtask_id);
            order.push(next.subtask_id);
        }
        Some(order)
    }
}

/// Execution progress of one subtask on one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub subtask_id: SubtaskId,
    pub progress: f64,
    pub executed_units: u32,
    pub work_units: u32,
    pub host_agent: NodeId,
    pub checkpoint_time: SimTime,
    pub context_tag: ContextTag,
}

impl TaskState {
    pub fn new(
        subtask_id: SubtaskId,
        work_units: u32,
        host_agent: NodeId,
        now: SimTime,
        context_tag: ContextTag,
    ) -> Self {
        Self {
            subtask_id,
            progress: 0.0,
            executed_units: 0,
            work_units,
            host_agent,
            checkpoint_time: now,
            context_tag,
        }
    }

    /// Sets the executed unit count and derives progress from it.
    pub fn set_executed(&mut self, executed_units: u32, now: SimTime) {
        debug_assert!(executed_units <= self.work_units);
        self.executed_units = executed_units;
        self.progress = f64::from(executed_units) / f64::from(self.work_units);
        self.checkpoint_time = now;
    }

    pub fn is_complete(&self) -> bool {
        self.executed_units >= self.work_units
    }

    /// `executed_units == floor(progress * work_units)`, allowing for the
    /// rounding of `progress` itself.
    pub fn is_coherent(&self) -> bool {
        if !(0.0..=1.0).contains(&self.progress) || self.executed_units > self.work_units {
            return false;
        }
        let scaled = self.progress * f64::from(self.work_units);
        (scaled - f64::from(self.executed_units)).abs() < 1e-6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: NodeId,
    pub position: Position,
    pub coverage_radius: f64,
    pub capability_class: CapabilityClass,
    /// Work units per second.
    pub cpu_capacity: f64,
    pub mem_capacity: u64,
    pub is_rendezvous: bool,
}

impl NodeProfile {
    /// Milliseconds needed to execute one work unit. `None` unless
    /// `1000 / cpu_capacity` is a positive whole number of milliseconds.
    pub fn quantum_ms(&self) -> Option<u64> {
        if !(self.cpu_capacity.is_finite() && self.cpu_capacity > 0.0) {
            return None;
        }
        let q = 1000.0 / self.cpu_capacity;
        let r = q.round();
        if r >= 1.0 && (q - r).abs() < 1e-9 {
            Some(r as u64)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node_id: NodeId,
    pub sampled_at: SimTime,
    pub cpu_load: f64,
    pub mem_used: f64,
    /// Bits per second.
    pub bandwidth_avail: f64,
    pub rssi: f64,
    pub snr: f64,
    /// Speed of the user relative to the node, m/s.
    pub mobility_speed: f64,
    pub traffic_type: TrafficType,
}

impl NodeMetrics {
    pub fn staleness(&self, now: SimTime) -> Option<u64> {
        now.checked_sub(self.sampled_at)
    }
}

/// Weights of the linear candidate scorer. The canonical form sums to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingWeights {
    pub w_bandwidth: f64,
    pub w_cpu_headroom: f64,
    pub w_mem_headroom: f64,
    pub w_snr: f64,
    pub w_residence: f64,
    pub w_traffic_match: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WeightsError {
    #[error("ranking weight {0} is negative or not finite")]
    Negative(&'static str),
    #[error("all ranking weights are zero")]
    AllZero,
}

impl RankingWeights {
    pub const NAMES: [&'static str; 6] = [
        "w_bandwidth",
        "w_cpu_headroom",
        "w_mem_headroom",
        "w_snr",
        "w_residence",
        "w_traffic_match",
    ];

    pub fn uniform() -> Self {
        Self::from_array([1.0 / 6.0; 6])
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            w_bandwidth: a[0],
            w_cpu_headroom: a[1],
            w_mem_headroom: a[2],
            w_snr: a[3],
            w_residence: a[4],
            w_traffic_match: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.w_bandwidth,
            self.w_cpu_headroom,
            self.w_mem_headroom,
            self.w_snr,
            self.w_residence,
            self.w_traffic_match,
        ]
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        let a = self.to_array();
        for (w, name) in a.iter().zip(Self::NAMES) {
            if !w.is_finite() || *w < 0.0 {
                return Err(WeightsError::Negative(name));
            }
        }
        if a.iter().all(|w| *w == 0.0) {
            return Err(WeightsError::AllZero);
        }
        Ok(())
    }

    /// Scales the weights to sum to 1.
    pub fn canonical(&self) -> Result<Self, WeightsError> {
        self.validate()?;
        let a = self.to_array();
        let sum: f64 = a.iter().sum();
        Ok(Self::from_array(a.map(|w| w / sum)))
    }

    pub fn is_canonical(&self) -> bool {
        self.validate().is_ok() && (self.to_array().iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

/// Outcome statistics carried alongside the weights in a handover package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CausalityStats {
    pub successes: u64,
    pub failures: u64,
}

/// Runtime policy shipped with a package: the learned ranking weights plus
/// the decision-causality summary of the sending agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub weights: RankingWeights,
    pub stats: CausalityStats,
    /// Encoded size of the policy on the wire.
    pub encoded_bytes: u64,
}

/// Opaque link-layer parameter blob, serialized as hex.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkParams(pub Vec<u8>);

impl Serialize for LinkParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for LinkParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s)
            .map(LinkParams)
            .map_err(serde::de::Error::custom)
    }
}

impl LinkParams {
    /// Deterministic filler payload of `len` bytes.
    pub fn filler(len: usize, salt: u32) -> Self {
        LinkParams(
            (0..len)
                .map(|i| (i as u32).wrapping_mul(31).wrapping_add(salt) as u8)
                .collect(),
        )
    }
}

/// The unit of transfer in an intent handover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverPackage {
    pub package_id: PackageId,
    pub intent_id: IntentId,
    pub task_state: TaskState,
    pub state_size_fn: StateSizeFn,
    pub policy_snapshot: PolicySnapshot,
    pub ttl: SemanticTtl,
    pub link_params: LinkParams,
    pub ranked_fallbacks: Vec<NodeId>,
    pub size_bytes: u64,
}

/// Wire size of a package: intermediate state + policy + link parameters.
pub fn package_size(pkg: &HandoverPackage) -> u64 {
    pkg.state_size_fn.bytes_at(pkg.task_state.progress)
        + pkg.policy_snapshot.encoded_bytes
        + pkg.link_params.0.len() as u64
}

/// One broken invariant found by [`validate_intent`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

pub type ValidationResult = Result<(), Vec<Violation>>;

pub fn validate_intent(intent: &Intent) -> ValidationResult {
    let mut v = Vec::new();
    if intent.subtasks.is_empty() {
        v.push(Violation::new("subtasks", "subtasks non-empty"));
    }
    let mut seen = BTreeSet::new();
    for (i, s) in intent.subtasks.iter().enumerate() {
        if !seen.insert(s.subtask_id) {
            v.push(Violation::new(
                format!("subtasks[{i}].subtask_id"),
                "subtask ids unique",
            ));
        }
        if s.work_units < 1 {
            v.push(Violation::new(
                format!("subtasks[{i}].work_units"),
                "work_units >= 1",
            ));
        }
        if !s.state_size_fn.is_non_negative() {
            v.push(Violation::new(
                format!("subtasks[{i}].state_size_fn"),
                "state_size_fn(p) >= 0 on [0,1]",
            ));
        }
        for d in &s.depends_on {
            if !intent.subtasks.iter().any(|o| o.subtask_id == *d) {
                v.push(Violation::new(
                    format!("subtasks[{i}].depends_on"),
                    format!("dependency {d} exists"),
                ));
            }
        }
    }
    if has_cycle(intent) {
        v.push(Violation::new(
            "subtasks.depends_on",
            "dependency graph acyclic",
        ));
    }
    if intent.qoe.max_latency == 0 {
        v.push(Violation::new("qoe.max_latency", "max_latency > 0"));
    }
    if !(0.0..=1.0).contains(&intent.qoe.min_accuracy) {
        v.push(Violation::new("qoe.min_accuracy", "0 <= min_accuracy <= 1"));
    }
    if intent.ttl.time_budget == 0 {
        v.push(Violation::new("ttl.time_budget", "time_budget > 0"));
    }
    if !(0.0..=1.0).contains(&intent.ttl.relevance_threshold) {
        v.push(Violation::new(
            "ttl.relevance_threshold",
            "0 <= relevance_threshold <= 1",
        ));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Depth-first search with white/grey/black colouring over known edges.
fn has_cycle(intent: &Intent) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Colour {
        White,
        Grey,
        Black,
    }
    let edges: BTreeMap<SubtaskId, &[SubtaskId]> = intent
        .subtasks
        .iter()
        .map(|s| (s.subtask_id, s.depends_on.as_slice()))
        .collect();
    let mut colour: BTreeMap<SubtaskId, Colour> =
        edges.keys().map(|k| (*k, Colour::White)).collect();

    fn visit(
        n: SubtaskId,
        edges: &BTreeMap<SubtaskId, &[SubtaskId]>,
        colour: &mut BTreeMap<SubtaskId, Colour>,
    ) -> bool {
        colour.insert(n, Colour::Grey);
        for d in edges.get(&n).copied().unwrap_or_default() {
            match colour.get(d).copied() {
                Some(Colour::Grey) => return true,
                Some(Colour::White) if visit(*d, edges, colour) => return true,
                _ => {}
            }
        }
        colour.insert(n, Colour::Black);
        false
    }

    let keys: Vec<SubtaskId> = edges.keys().copied().collect();
    keys.into_iter()
        .any(|k| colour[&k] == Colour::White && visit(k, &edges, &mut colour))
}

/// Subtask entry of an [`IntentTemplate`]. Dependencies are template indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskTemplate {
    pub kind: SubtaskKind,
    pub work_units: u32,
    #[serde(default)]
    pub input_bytes: u64,
    #[serde(default)]
    pub state_base_bytes: f64,
    #[serde(default)]
    pub state_slope_bytes: f64,
    #[serde(default)]
    pub depends_on: Vec<usize>,
}

/// Declarative intent decomposition authored in scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentTemplate {
    pub subtasks: Vec<SubtaskTemplate>,
    pub max_latency_ms: u64,
    #[serde(default = "default_accuracy")]
    pub min_accuracy: f64,
    pub traffic_type: TrafficType,
    pub time_budget_ms: u64,
    pub relevance_threshold: f64,
    /// Context zone the intent refers to; defaults to the user's zone at submission.
    #[serde(default)]
    pub context_zone: Option<ZoneId>,
}

fn default_accuracy() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("intent template has no subtasks")]
    TemplateEmpty,
    #[error("subtask {index} depends on unknown template index {dep}")]
    BadDependency { index: usize, dep: usize },
}

/// Monotone id source for intents, subtasks and packages within one run.
#[derive(Debug, Clone, Default)]
pub struct IdGen {
    next_intent: u64,
    next_subtask: u64,
    next_package: u64,
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intent(&mut self) -> IntentId {
        self.next_intent += 1;
        IntentId(self.next_intent)
    }

    pub fn subtask(&mut self) -> SubtaskId {
        self.next_subtask += 1;
        SubtaskId(self.next_subtask)
    }

    pub fn package(&mut self) -> PackageId {
        self.next_package += 1;
        PackageId(self.next_package)
    }
}

/// Expands a template into a fresh [`Intent`] owned by `user`.
pub fn decompose(
    template: &IntentTemplate,
    user: UserId,
    now: SimTime,
    context: ContextTag,
    ids: &mut IdGen,
) -> Result<Intent, DecomposeError> {
    if template.subtasks.is_empty() {
        return Err(DecomposeError::TemplateEmpty);
    }
    let intent_id = ids.intent();
    let sub_ids: Vec<SubtaskId> = template.subtasks.iter().map(|_| ids.subtask()).collect();
    let mut subtasks = Vec::with_capacity(template.subtasks.len());
    for (i, t) in template.subtasks.iter().enumerate() {
        let mut depends_on = Vec::with_capacity(t.depends_on.len());
        for &d in &t.depends_on {
            let id = sub_ids
                .get(d)
                .ok_or(DecomposeError::BadDependency { index: i, dep: d })?;
            depends_on.push(*id);
        }
        subtasks.push(SubTask {
            subtask_id: sub_ids[i],
            kind: t.kind,
            work_units: t.work_units,
            input_size: t.input_bytes,
            state_size_fn: StateSizeFn::new(t.state_base_bytes, t.state_slope_bytes),
            depends_on,
        });
    }
    Ok(Intent {
        intent_id,
        user_id: user,
        submitted_at: now,
        subtasks,
        qoe: QoERequirements {
            max_latency: template.max_latency_ms,
            min_accuracy: template.min_accuracy,
            traffic_type: template.traffic_type,
        },
        ttl: SemanticTtl {
            created_at: now,
            time_budget: template.time_budget_ms,
            context_tag: context,
            relevance_threshold: template.relevance_threshold,
        },
    })
}
