//! JSONL event trace: a start line, one line per simulation record, an end line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::adapt::{BucketKey, BucketStats, TransferDecision};
use crate::domain::{
    ContextTag, HandoverPackage, Intent, IntentId, NodeId, NodeMetrics, PackageId, Position,
    RankingWeights, SemanticTtl, SimTime, SubtaskId, TaskState, UserId, ZoneId,
};
use crate::handover::{HandoverOutcome, Phase};
use crate::scenario::{FaultAction, Mode, Scenario};
use crate::swarm::{CandidateScore, SwarmQuery};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum TraceLine {
    Start(TraceStart),
    Event(TraceEvent),
    End(TraceEnd),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStart {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    /// Sequence number of the queue event that produced this record.
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LinkLost,
    NodeDown,
    FullOffload,
    Recovery,
    Abort,
    StaleContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtlPurpose {
    Resume,
    Result,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventBody {
    IntentSubmitted {
        user: UserId,
        intent: Intent,
    },
    IntentDispatched {
        intent: IntentId,
        node: NodeId,
        lineage: u32,
        resubmission: bool,
    },
    IntentPending {
        intent: IntentId,
        awaiting_recovery: bool,
    },
    ComputeQuantumDone {
        node: NodeId,
        intent: IntentId,
        subtask: SubtaskId,
        executed_units: u32,
        work_units: u32,
    },
    SubtaskCompleted {
        node: NodeId,
        intent: IntentId,
        subtask: SubtaskId,
    },
    UserMoved {
        user: UserId,
        position: Position,
        zone: ZoneId,
    },
    LinkEstablished {
        user: UserId,
        node: NodeId,
    },
    LinkLost {
        user: UserId,
        node: NodeId,
    },
    FaultInjected {
        node: NodeId,
        action: FaultAction,
    },
    PhaseChange {
        intent: IntentId,
        node: NodeId,
        from: Phase,
        to: Phase,
    },
    HandoverTriggered {
        intent: IntentId,
        node: NodeId,
        predicted_exit: SimTime,
        t_prepare: u64,
        progress: f64,
    },
    MetricQuery {
        intent: IntentId,
        query: SwarmQuery,
    },
    MetricReply {
        intent: IntentId,
        query_id: u64,
        metrics: NodeMetrics,
    },
    CandidatesRanked {
        intent: IntentId,
        query_id: u64,
        weights: RankingWeights,
        ranking: Vec<CandidateScore>,
    },
    TransferDecision {
        intent: IntentId,
        decision: TransferDecision,
    },
    PackageSent {
        intent: IntentId,
        from: NodeId,
        to: NodeId,
        attempt: u32,
        arrives_at: SimTime,
        package: HandoverPackage,
    },
    PackageDelivered {
        intent: IntentId,
        package_id: PackageId,
        to: NodeId,
        attempt: u32,
    },
    PackageLost {
        intent: IntentId,
        package_id: PackageId,
        to: NodeId,
        attempt: u32,
    },
    AckTimeout {
        intent: IntentId,
        target: NodeId,
        attempt: u32,
    },
    TtlVerdict {
        intent: IntentId,
        node: NodeId,
        purpose: TtlPurpose,
        valid: bool,
        relevance: f64,
        ttl: SemanticTtl,
        ctx_now: ContextTag,
    },
    SessionResumed {
        intent: IntentId,
        node: NodeId,
        state: TaskState,
        /// Node that opens the control channel back to the user.
        control_channel: NodeId,
        latency_reduction_pct: u8,
    },
    HandoverOutcome {
        outcome: HandoverOutcome,
    },
    SessionDropped {
        intent: IntentId,
        node: NodeId,
        reason: DropReason,
        lost_units: u64,
    },
    CheckpointDue {
        intent: IntentId,
        from: NodeId,
        store: NodeId,
        package_id: PackageId,
        arrives_at: SimTime,
    },
    CheckpointStored {
        intent: IntentId,
        store: NodeId,
        package_id: PackageId,
        stored: bool,
    },
    RecoveryFetch {
        intent: IntentId,
        store: NodeId,
        target: Option<NodeId>,
        hit: bool,
    },
    ResultDelivered {
        intent: IntentId,
        user: UserId,
        host: NodeId,
        completion_time: u64,
        qoe_met: bool,
    },
    ResultDiscarded {
        intent: IntentId,
        user: UserId,
        host: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDump {
    pub key: BucketKey,
    pub stats: BucketStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDump {
    pub node: NodeId,
    pub weights: RankingWeights,
    pub busy_ms: u64,
    pub executed_units: u64,
    pub outcomes_logged: usize,
    pub buckets: Vec<BucketDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEnd {
    pub t: SimTime,
    pub events_processed: u64,
    pub unfinished: Vec<IntentId>,
    pub agents: Vec<AgentDump>,
}

pub fn write_jsonl<W: Write>(lines: &[TraceLine], mut w: W) -> std::io::Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(lines: &[TraceLine]) -> String {
    let mut buf = Vec::new();
    write_jsonl(lines, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace schema version {0} is not supported")]
    Schema(u32),
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TraceLine>, TraceReadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|source| TraceReadError::Json {
                line: i + 1,
                source,
            })?;
        if let TraceLine::Start(s) = &parsed {
            if s.schema_version != TRACE_SCHEMA_VERSION {
                return Err(TraceReadError::Schema(s.schema_version));
            }
        }
        out.push(parsed);
    }
    Ok(out)
}

/// Event records only, in file order.
pub fn events(lines: &[TraceLine]) -> impl Iterator<Item = &TraceEvent> {
    lines.iter().filter_map(|l| match l {
        TraceLine::Event(e) => Some(e),
        _ => None,
    })
}
