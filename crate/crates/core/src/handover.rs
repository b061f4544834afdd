//! Intent-aware handover protocol pieces: the per-intent session state
//! machine, exit prediction, trigger rule, package construction, semantic TTL
//! and resumption. The event-driven orchestration lives in [`crate::sim`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    package_size, ContextTag, HandoverPackage, IdGen, IntentId, LinkParams, NodeId, NodeProfile,
    PolicySnapshot, SemanticTtl, SimTime, StateSizeFn, TaskState,
};
use crate::kernel::mobility::{first_exit_time, position_at, MobilityPath};
use crate::kernel::radio::RadioModel;
use crate::swarm::CandidateScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Executing,
    HandoverPreparing,
    Transferring,
    AwaitingAck,
    Resuming,
    Completed,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }

    /// Session is somewhere between trigger and resume.
    pub fn in_handover(self) -> bool {
        matches!(
            self,
            Phase::HandoverPreparing | Phase::Transferring | Phase::AwaitingAck | Phase::Resuming
        )
    }

    pub fn can_transition(self, to: Phase) -> bool {
        use Phase::*;
        if self.is_terminal() {
            return false;
        }
        matches!(
            (self, to),
            (Executing, HandoverPreparing)
                | (Executing, Completed)
                | (HandoverPreparing, Transferring)
                | (HandoverPreparing, Executing)
                | (Transferring, Transferring)
                | (Transferring, AwaitingAck)
                | (AwaitingAck, Resuming)
                | (AwaitingAck, Transferring)
                | (Resuming, Executing)
                | (_, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandoverError {
    #[error("illegal phase transition {from:?} -> {to:?} for {intent}")]
    IllegalTransition {
        intent: IntentId,
        from: Phase,
        to: Phase,
    },
    #[error("user is not connected to {0}")]
    NotConnected(NodeId),
    #[error("no handover candidate available")]
    NoCandidate,
    #[error("semantic TTL no longer valid")]
    StaleContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSession {
    pub intent_id: IntentId,
    pub host_node: NodeId,
    pub phase: Phase,
    pub current_state: TaskState,
    pub ranked_fallbacks: Vec<NodeId>,
    pub prepare_deadline: SimTime,
}

impl AgentSession {
    pub fn new(intent_id: IntentId, host_node: NodeId, state: TaskState) -> Self {
        Self {
            intent_id,
            host_node,
            phase: Phase::Executing,
            current_state: state,
            ranked_fallbacks: Vec::new(),
            prepare_deadline: 0,
        }
    }

    pub fn transition(&mut self, to: Phase) -> Result<Phase, HandoverError> {
        let from = self.phase;
        if !from.can_transition(to) {
            return Err(HandoverError::IllegalTransition {
                intent: self.intent_id,
                from,
                to,
            });
        }
        self.phase = to;
        Ok(from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverResult {
    Success,
    FallbackSuccess,
    Abort,
}

/// How the execution context reached the new host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// Intermediate state shipped; nothing recomputed.
    StateTransfer,
    /// Inputs re-sent; the current subtask restarts on the target.
    FullOffload,
    /// Last rendezvous checkpoint fetched after the source was lost.
    RendezvousRecovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverOutcome {
    pub intent_id: IntentId,
    pub source: NodeId,
    pub target: NodeId,
    pub attempt_index: u32,
    pub started_at: SimTime,
    pub finished_at: SimTime,
    pub result: HandoverResult,
    pub transfer_kind: TransferKind,
    pub progress_at_transfer: f64,
    pub recomputed_units: u32,
}

impl HandoverOutcome {
    pub fn succeeded(&self) -> bool {
        matches!(
            self.result,
            HandoverResult::Success | HandoverResult::FallbackSuccess
        )
    }

    /// Succeeded without discarding any executed work.
    pub fn is_lossless(&self) -> bool {
        self.succeeded() && self.recomputed_units == 0
    }

    pub fn invariant_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.attempt_index < 1 {
            v.push("attempt_index >= 1".into());
        }
        if self.result == HandoverResult::FallbackSuccess && self.attempt_index < 2 {
            v.push("FallbackSuccess requires attempt_index >= 2".into());
        }
        if self.succeeded()
            && self.transfer_kind == TransferKind::StateTransfer
            && self.recomputed_units != 0
        {
            v.push("state-transfer success must not recompute".into());
        }
        if self.finished_at < self.started_at {
            v.push("finished_at >= started_at".into());
        }
        v
    }
}

/// Radius of the disc in which the user stays attached to `node`.
pub fn coverage_radius(radio: &RadioModel, node: &NodeProfile, shadowing_db: f64) -> f64 {
    radio.effective_radius(node, shadowing_db)
}

/// Earliest sim-time at or after `now` at which the analytic path leaves the
/// node's coverage disc; `None` if that does not happen by `horizon`.
pub fn predict_exit(
    path: &MobilityPath,
    node: &NodeProfile,
    radius: f64,
    now: SimTime,
    horizon: SimTime,
) -> Result<Option<SimTime>, HandoverError> {
    let here = position_at(path, now).map_err(|_| HandoverError::NotConnected(node.node_id))?;
    if here.distance(&node.position) > radius {
        return Err(HandoverError::NotConnected(node.node_id));
    }
    Ok(first_exit_time(path, node.position, radius, now)
        .map(|t| ((t - 1e-6).ceil().max(now as f64)) as SimTime)
        .filter(|t| *t <= horizon))
}

/// Moves an executing session to `HandoverPreparing` when the predicted exit
/// is within `t_prepare`. Returns whether it fired.
pub fn trigger_handover(
    session: &mut AgentSession,
    predicted_exit: Option<SimTime>,
    now: SimTime,
    t_prepare: u64,
) -> bool {
    if session.phase != Phase::Executing {
        return false;
    }
    match predicted_exit {
        Some(exit) if exit.saturating_sub(now) <= t_prepare => {
            session.phase = Phase::HandoverPreparing;
            session.prepare_deadline = exit;
            true
        }
        _ => false,
    }
}

/// Splits the ranking into primary target and fallbacks and assembles the
/// package around the session's checkpointed state.
#[allow(clippy::too_many_arguments)]
pub fn build_package(
    session: &AgentSession,
    ranking: &[CandidateScore],
    policy: PolicySnapshot,
    ttl: &SemanticTtl,
    link_params: LinkParams,
    state_size_fn: StateSizeFn,
    ids: &mut IdGen,
) -> Result<(NodeId, HandoverPackage), HandoverError> {
    let (first, rest) = ranking.split_first().ok_or(HandoverError::NoCandidate)?;
    let ranked_fallbacks = rest
        .iter()
        .map(|c| c.node_id)
        .filter(|n| *n != session.host_node && *n != first.node_id)
        .collect();
    let mut pkg = HandoverPackage {
        package_id: ids.package(),
        intent_id: session.intent_id,
        task_state: session.current_state.clone(),
        state_size_fn,
        policy_snapshot: policy,
        ttl: ttl.clone(),
        link_params,
        ranked_fallbacks,
        size_bytes: 0,
    };
    pkg.size_bytes = package_size(&pkg).max(1);
    Ok((first.node_id, pkg))
}

/// 1 when zone and intent version match, 0.5 when only the version does, else 0.
pub fn relevance(tag: &ContextTag, ctx_now: &ContextTag) -> f64 {
    match (
        tag.zone == ctx_now.zone,
        tag.intent_version == ctx_now.intent_version,
    ) {
        (true, true) => 1.0,
        (false, true) => 0.5,
        _ => 0.0,
    }
}

pub fn ttl_valid(ttl: &SemanticTtl, now: SimTime, ctx_now: &ContextTag) -> bool {
    now.saturating_sub(ttl.created_at) <= ttl.time_budget
        && now >= ttl.created_at
        && relevance(&ttl.context_tag, ctx_now) >= ttl.relevance_threshold
}

/// Creates the target-side session from a delivered package. The task state
/// is copied verbatim apart from the host.
pub fn resume(
    pkg: &HandoverPackage,
    target: NodeId,
    now: SimTime,
    ctx_now: &ContextTag,
) -> Result<AgentSession, HandoverError> {
    if !ttl_valid(&pkg.ttl, now, ctx_now) {
        return Err(HandoverError::StaleContext);
    }
    let mut state = pkg.task_state.clone();
    state.host_agent = target;
    let mut s = AgentSession::new(pkg.intent_id, target, state);
    s.phase = Phase::Resuming;
    s.transition(Phase::Executing)?;
    Ok(s)
}

/// Work accounting for reactive drop-and-resubmit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResubmissionLedger {
    pub executed_total: u64,
    pub recomputed: u64,
    pub losses: u32,
}

impl ResubmissionLedger {
    pub fn execute(&mut self, units: u64) {
        self.executed_total += units;
    }

    /// Link lost with `executed_in_lineage` units done since the last (re)submission.
    pub fn lose(&mut self, executed_in_lineage: u64) {
        self.recomputed += executed_in_lineage;
        self.losses += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        CapabilityClass, CausalityStats, IntentId, Position, RankingWeights, SubtaskId, UserId,
        ZoneId,
    };
    use crate::kernel::mobility::Waypoint;
    use crate::swarm::Components;

    fn ctx(zone: u32, ver: u32) -> ContextTag {
        ContextTag {
            zone: ZoneId(zone),
            intent_version: ver,
        }
    }

    fn node() -> NodeProfile {
        NodeProfile {
            node_id: NodeId(1),
            position: Position::new(0.0, 0.0),
            coverage_radius: 50.0,
            capability_class: CapabilityClass::EdgeNode,
            cpu_capacity: 10.0,
            mem_capacity: 1 << 20,
            is_rendezvous: false,
        }
    }

    fn path(points: &[(u64, f64, f64)]) -> MobilityPath {
        MobilityPath::scripted(
            UserId(1),
            points
                .iter()
                .map(|&(at, x, y)| Waypoint {
                    at,
                    position: Position::new(x, y),
                })
                .collect(),
        )
    }

    fn session(units: u32) -> AgentSession {
        let mut st = TaskState::new(SubtaskId(2), 100, NodeId(1), 0, ctx(1, 0));
        st.set_executed(units, 0);
        AgentSession::new(IntentId(1), NodeId(1), st)
    }

    fn ttl(threshold: f64) -> SemanticTtl {
        SemanticTtl {
            created_at: 1000,
            time_budget: 5000,
            context_tag: ctx(1, 0),
            relevance_threshold: threshold,
        }
    }

    fn cand(id: u32) -> CandidateScore {
        CandidateScore {
            node_id: NodeId(id),
            score: 0.5,
            components: Components::from_array([0.5; 6]),
            metrics_staleness: 0,
        }
    }

    fn policy() -> PolicySnapshot {
        PolicySnapshot {
            weights: RankingWeights::uniform(),
            stats: CausalityStats::default(),
            encoded_bytes: 200,
        }
    }

    #[test]
    fn predict_exit_cases() {
        let n = node();
        let still = path(&[(0, 10.0, 0.0)]);
        assert_eq!(predict_exit(&still, &n, 50.0, 0, 1_000_000), Ok(None));

        let through = path(&[(0, 0.0, 0.0), (200_000, 200.0, 0.0)]);
        assert_eq!(
            predict_exit(&through, &n, 50.0, 0, 1_000_000),
            Ok(Some(50_000))
        );
        // horizon cuts it off
        assert_eq!(predict_exit(&through, &n, 50.0, 0, 49_999), Ok(None));

        // out to 60 m, back to the centre, out again
        let zigzag = path(&[
            (0, 0.0, 0.0),
            (60_000, 60.0, 0.0),
            (120_000, 0.0, 0.0),
            (300_000, 0.0, 180.0),
        ]);
        assert_eq!(
            predict_exit(&zigzag, &n, 50.0, 0, 1_000_000),
            Ok(Some(50_000))
        );
        // after re-entry the next exit is on the last leg: 50 m at 1 m/s
        assert_eq!(
            predict_exit(&zigzag, &n, 50.0, 120_000, 1_000_000),
            Ok(Some(170_000))
        );
        assert_eq!(
            predict_exit(&zigzag, &n, 50.0, 55_000, 1_000_000),
            Err(HandoverError::NotConnected(NodeId(1)))
        );
    }

    #[test]
    fn trigger_rule() {
        let mut s = session(60);
        assert!(!trigger_handover(&mut s, Some(20_000), 10_000, 5_000));
        assert_eq!(s.phase, Phase::Executing);
        assert!(!trigger_handover(&mut s, None, 10_000, 5_000));
        assert!(trigger_handover(&mut s, Some(20_000), 10_000, 15_000));
        assert_eq!(s.phase, Phase::HandoverPreparing);
        // only from Executing
        assert!(!trigger_handover(&mut s, Some(20_000), 10_000, 15_000));
    }

    #[test]
    fn package_split_and_progress() {
        let mut ids = IdGen::new();
        let s = session(60);
        let (target, pkg) = build_package(
            &s,
            &[cand(5), cand(7), cand(9)],
            policy(),
            &ttl(0.6),
            LinkParams::filler(64, 1),
            StateSizeFn::new(1000.0, 5000.0),
            &mut ids,
        )
        .unwrap();
        assert_eq!(target, NodeId(5));
        assert_eq!(pkg.ranked_fallbacks, vec![NodeId(7), NodeId(9)]);
        assert_eq!(pkg.task_state.progress, 0.6);
        assert_eq!(pkg.size_bytes, 4264);
        assert_eq!(pkg.ttl, ttl(0.6));

        assert_eq!(
            build_package(
                &s,
                &[],
                policy(),
                &ttl(0.6),
                LinkParams::default(),
                StateSizeFn::new(1.0, 0.0),
                &mut ids
            )
            .unwrap_err(),
            HandoverError::NoCandidate
        );
    }

    #[test]
    fn ttl_map_at_threshold_point_six() {
        let t = ttl(0.6);
        assert!(ttl_valid(&t, 1000, &ctx(1, 0)));
        assert!(!ttl_valid(&t, 1000, &ctx(2, 0)));
        assert!(!ttl_valid(&t, 1000, &ctx(1, 1)));
        assert!(!ttl_valid(&t, 1000, &ctx(2, 1)));
        assert!(ttl_valid(&t, 6000, &ctx(1, 0)));
        assert!(!ttl_valid(&t, 6001, &ctx(1, 0)));
        assert_eq!(relevance(&ctx(1, 0), &ctx(2, 0)), 0.5);
        assert!(ttl_valid(&ttl(0.5), 1000, &ctx(2, 0)));
    }

    #[test]
    fn resume_copies_state() {
        let mut ids = IdGen::new();
        let (_, pkg) = build_package(
            &session(60),
            &[cand(5)],
            policy(),
            &ttl(0.6),
            LinkParams::default(),
            StateSizeFn::new(1000.0, 5000.0),
            &mut ids,
        )
        .unwrap();
        let s = resume(&pkg, NodeId(5), 2000, &ctx(1, 0)).unwrap();
        assert_eq!(s.phase, Phase::Executing);
        assert_eq!(s.current_state.executed_units, 60);
        assert_eq!(
            s.current_state.work_units - s.current_state.executed_units,
            40
        );
        assert_eq!(s.host_node, NodeId(5));
        assert_eq!(
            resume(&pkg, NodeId(5), 6001, &ctx(1, 0)),
            Err(HandoverError::StaleContext)
        );
    }

    #[test]
    fn phase_machine() {
        let mut s = session(0);
        assert!(s.transition(Phase::Resuming).is_err());
        s.transition(Phase::HandoverPreparing).unwrap();
        s.transition(Phase::Transferring).unwrap();
        s.transition(Phase::Transferring).unwrap();
        s.transition(Phase::AwaitingAck).unwrap();
        s.transition(Phase::Resuming).unwrap();
        s.transition(Phase::Executing).unwrap();
        s.transition(Phase::Completed).unwrap();
        assert!(s.transition(Phase::Failed).is_err());
    }

    #[test]
    fn baseline_ledger_examples() {
        let run = |losses: &[u64], work: u64| {
            let mut l = ResubmissionLedger::default();
            for &u in losses {
                l.execute(u);
                l.lose(u);
            }
            l.execute(work);
            l
        };
        assert_eq!(run(&[60], 100).executed_total, 160);
        assert_eq!(run(&[0], 100).executed_total, 100);
        let two = run(&[50, 50], 100);
        assert_eq!(two.executed_total, 200);
        assert_eq!(two.recomputed, 100);
    }
}
