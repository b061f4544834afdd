//! The simulation engine. Wires mobility, radio, swarm ranking, the handover
//! protocol, rendezvous caching and adaptation into one deterministic event loop.
//!
//! Compute model: every node runs one session at a time from a FIFO queue and
//! executes one work unit per quantum (`1000 / cpu_capacity` ms). Only
//! completed quanta count as work. The subtasks of an intent run sequentially
//! in topological order under one session.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use thiserror::Error;

use crate::adapt::{
    decide_transfer_kind, AdaptState, BucketKey, OutcomeContext, SpeedBand, TransferCostInputs,
};
use crate::domain::{
    decompose, ContextTag, HandoverPackage, IdGen, Intent, IntentId, LinkParams, NodeId,
    NodeMetrics, NodeProfile, PolicySnapshot, SemanticTtl, SimTime, SubTask, TaskState, UserId,
};
use crate::handover::{
    build_package, coverage_radius, predict_exit, relevance, resume, trigger_handover,
    AgentSession, HandoverOutcome, HandoverResult, Phase, TransferKind,
};
use crate::kernel::mobility::{position_at, random_waypoint, MobilityPath};
use crate::kernel::queue::EventQueue;
use crate::kernel::radio::{connected_with_offset, nodes_in_range, transfer_time};
use crate::kernel::rng::RunRng;
use crate::rendezvous::{audit_violations, AuditAction, RendezvousStore};
use crate::scenario::{FaultAction, MobilitySpec, Mode, NodeSpec, Scenario, UserSpec};
use crate::swarm::{
    collect_metrics, discard_stale, discover_neighbors, normalize_metrics, rank_candidates,
    Components, CoverageDisc, MetricEnv, SwarmQuery, UserState,
};
use crate::trace::{
    AgentDump, BucketDump, DropReason, EventBody, TraceEnd, TraceEvent, TraceLine, TraceStart,
    TtlPurpose, TRACE_SCHEMA_VERSION,
};

/// Extra CPU load reported per hosted session.
const LOAD_PER_SESSION: f64 = 0.25;
const MEM_PER_SESSION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("invariant violated at t={t}: {message}")]
    Invariant {
        t: SimTime,
        message: String,
        /// Trace up to the violation.
        trace: Vec<TraceLine>,
    },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceLine>,
    pub stores: BTreeMap<NodeId, RendezvousStore>,
}

impl RunOutput {
    pub fn trace_jsonl(&self) -> String {
        crate::trace::to_jsonl(&self.trace)
    }
}

/// Runs one (scenario, seed, mode) cell to the scenario end time.
pub fn run(sc: &Scenario, seed: u64, mode: Mode) -> Result<RunOutput, RunError> {
    let v = sc.violations();
    if !v.is_empty() {
        return Err(RunError::Invalid(v));
    }
    let mut e = Engine::new(sc, seed, mode);
    e.init();
    e.run_loop()?;
    e.finish()
}

#[derive(Debug, Clone)]
enum Ev {
    Submit(UserId),
    Tick(UserId),
    Fault(usize),
    Quantum {
        node: NodeId,
        intent: IntentId,
        token: u64,
    },
    MetricReply {
        intent: IntentId,
        query_id: u64,
        metrics: NodeMetrics,
    },
    RankDue {
        intent: IntentId,
        query_id: u64,
    },
    PackageArrive {
        intent: IntentId,
        token: u64,
        from: NodeId,
        to: NodeId,
        lost: bool,
    },
    AckTimeout {
        intent: IntentId,
        token: u64,
    },
    CheckpointArrive {
        store: NodeId,
        package: Box<HandoverPackage>,
    },
    RecoveryFetch {
        intent: IntentId,
        store: NodeId,
    },
    ResultArrive {
        intent: IntentId,
    },
}

struct NodeRt {
    spec: NodeSpec,
    profile: NodeProfile,
    quantum: u64,
    up: bool,
    link_up: bool,
    queue: VecDeque<IntentId>,
    running: Option<(IntentId, u64)>,
    hosted: BTreeSet<IntentId>,
    busy_ms: u64,
    executed: u64,
}

struct UserRt {
    spec: UserSpec,
    path: MobilityPath,
    connected: BTreeSet<NodeId>,
    zone: Option<crate::domain::ZoneId>,
    intent: Option<IntentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending { recover_from: Option<NodeId> },
    Active,
    Recovering,
    Delivering { scheduled: bool },
    Done,
    Failed,
}

/// Handover in flight for one session.
struct Ho {
    query_id: u64,
    expected: usize,
    replies: Vec<NodeMetrics>,
    ranked: bool,
    started_at: SimTime,
    /// Source recorded in the outcome.
    origin: NodeId,
    /// Node that normally sends the package.
    sender: NodeId,
    kind: TransferKind,
    package: Option<HandoverPackage>,
    targets: Vec<NodeId>,
    attempt: u32,
    token: u64,
    delivered: bool,
    decider: NodeId,
    bucket: Option<BucketKey>,
    chosen: Option<Components>,
    recomputed: u64,
    progress: f64,
}

struct Session {
    s: AgentSession,
    sub: usize,
    since_checkpoint: u32,
    policy: Option<PolicySnapshot>,
    no_retrigger: bool,
    store: Option<NodeId>,
    ho: Option<Ho>,
}

struct LoggedOutcome {
    decider: NodeId,
    outcome: HandoverOutcome,
    bucket: BucketKey,
    chosen: Option<Components>,
}

struct IntentRt {
    intent: Intent,
    order: Vec<usize>,
    user: UserId,
    status: Status,
    ttl: SemanticTtl,
    lineage: u32,
    session: Option<Session>,
    /// Units of the current lineage state: finished subtasks plus current progress.
    position: u64,
    executed: u64,
    recomputed: u64,
    outcomes: Vec<LoggedOutcome>,
    last_host: NodeId,
    lost_at: SimTime,
    latency_pct: u8,
}

impl IntentRt {
    fn sub(&self, idx: usize) -> &SubTask {
        &self.intent.subtasks[self.order[idx]]
    }

    fn prefix_units(&self, idx: usize) -> u64 {
        (0..idx).map(|i| u64::from(self.sub(i).work_units)).sum()
    }

    fn index_of(&self, sub: crate::domain::SubtaskId) -> Option<usize> {
        (0..self.order.len()).find(|&i| self.sub(i).subtask_id == sub)
    }
}

/// Metric snapshot handed to the swarm query.
struct SnapshotEnv {
    reachable: BTreeSet<NodeId>,
    metrics: BTreeMap<NodeId, NodeMetrics>,
    latency: u64,
    jitter: u64,
}

impl MetricEnv for SnapshotEnv {
    fn reachable(&self, _from: NodeId, to: NodeId) -> bool {
        self.reachable.contains(&to)
    }
    fn sample(&self, node: NodeId, at: SimTime) -> NodeMetrics {
        let mut m = self.metrics[&node].clone();
        m.sampled_at = at;
        m
    }
    fn base_latency(&self) -> u64 {
        self.latency
    }
    fn jitter_max(&self) -> u64 {
        self.jitter
    }
}

struct Engine<'a> {
    sc: &'a Scenario,
    mode: Mode,
    q: EventQueue<Ev>,
    rng: RunRng,
    ids: IdGen,
    nodes: BTreeMap<NodeId, NodeRt>,
    profiles: Vec<NodeProfile>,
    users: BTreeMap<UserId, UserRt>,
    shadow: BTreeMap<(UserId, NodeId), f64>,
    intents: BTreeMap<IntentId, IntentRt>,
    stores: BTreeMap<NodeId, RendezvousStore>,
    adapt: BTreeMap<NodeId, AdaptState>,
    trace: Vec<TraceLine>,
    seq: u64,
    processed: u64,
    next_query: u64,
    next_token: u64,
}

type Step = Result<(), RunError>;

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, seed: u64, mode: Mode) -> Self {
        let mut rng = RunRng::new(seed);
        let k = &sc.knobs;
        let nodes: BTreeMap<NodeId, NodeRt> = sc
            .nodes
            .iter()
            .map(|n| {
                let profile = n.profile();
                let quantum = profile.quantum_ms().expect("validated");
                (
                    n.id,
                    NodeRt {
                        spec: n.clone(),
                        profile,
                        quantum,
                        up: true,
                        link_up: true,
                        queue: VecDeque::new(),
                        running: None,
                        hosted: BTreeSet::new(),
                        busy_ms: 0,
                        executed: 0,
                    },
                )
            })
            .collect();
        let mut users = BTreeMap::new();
        for u in &sc.users {
            let path = match &u.mobility {
                MobilitySpec::Scripted { waypoints } => {
                    MobilityPath::scripted(u.id, waypoints.clone())
                }
                MobilitySpec::RandomWaypoint {
                    speed_min,
                    speed_max,
                    bounds,
                    pause_ms,
                    start_at,
                } => random_waypoint(
                    u.id,
                    seed,
                    &mut rng.mobility,
                    (*speed_min, *speed_max),
                    bounds.unwrap_or(sc.world),
                    *start_at,
                    sc.end_time,
                    *pause_ms,
                ),
            };
            users.insert(
                u.id,
                UserRt {
                    spec: u.clone(),
                    path,
                    connected: BTreeSet::new(),
                    zone: None,
                    intent: None,
                },
            );
        }
        let mut shadow = BTreeMap::new();
        if sc.radio.shadowing_sigma > 0.0 {
            let normal = Normal::new(0.0, sc.radio.shadowing_sigma).expect("sigma validated");
            for u in users.keys() {
                for n in nodes.keys() {
                    shadow.insert((*u, *n), normal.sample(&mut rng.shadowing));
                }
            }
        }
        let stores = sc
            .nodes
            .iter()
            .filter(|n| n.rendezvous)
            .map(|n| (n.id, RendezvousStore::new(n.id, k.rendezvous_capacity)))
            .collect();
        let adapt = sc
            .nodes
            .iter()
            .map(|n| {
                (
                    n.id,
                    AdaptState::new(k.initial_weights, k.eta, k.few_shot_k_min),
                )
            })
            .collect();
        let start = TraceLine::Start(TraceStart {
            schema_version: TRACE_SCHEMA_VERSION,
            scenario_hash: sc.hash(),
            seed,
            mode,
            scenario: sc.clone(),
        });
        Self {
            sc,
            mode,
            q: EventQueue::new(),
            rng,
            ids: IdGen::new(),
            profiles: sc.profiles(),
            nodes,
            users,
            shadow,
            intents: BTreeMap::new(),
            stores,
            adapt,
            trace: vec![start],
            seq: 0,
            processed: 0,
            next_query: 1,
            next_token: 1,
        }
    }

    fn now(&self) -> SimTime {
        self.q.now()
    }

    fn at(&mut self, t: SimTime, ev: Ev) {
        self.q
            .schedule(t, ev)
            .expect("engine never schedules into the past");
    }

    fn emit(&mut self, body: EventBody) {
        self.trace.push(TraceLine::Event(TraceEvent {
            t: self.now(),
            seq: self.seq,
            body,
        }));
    }

    fn violation(&self, message: impl Into<String>) -> RunError {
        RunError::Invariant {
            t: self.now(),
            message: message.into(),
            trace: self.trace.clone(),
        }
    }

    fn token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    fn init(&mut self) {
        let sc = self.sc;
        for u in &sc.users {
            self.at(u.submit_at, Ev::Submit(u.id));
        }
        for (i, f) in sc.faults.iter().enumerate() {
            self.at(f.at, Ev::Fault(i));
        }
        let tick = sc.knobs.tick_ms;
        for u in self
            .users
            .values()
            .map(|u| (u.spec.id, u.path.start_time().unwrap_or(0)))
            .collect::<Vec<_>>()
        {
            let first = u.1.div_ceil(tick) * tick;
            if first <= sc.end_time {
                self.at(first, Ev::Tick(u.0));
            }
        }
    }

    fn run_loop(&mut self) -> Step {
        while let Some(t) = self.q.peek_time() {
            if t > self.sc.end_time {
                break;
            }
            let ev = self.q.pop().expect("peeked");
            self.seq = ev.seq;
            self.processed += 1;
            self.handle(ev.event)?;
        }
        self.q.advance_to(self.sc.end_time);
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Step {
        match ev {
            Ev::Submit(u) => self.on_submit(u),
            Ev::Tick(u) => self.on_tick(u),
            Ev::Fault(i) => self.on_fault(i),
            Ev::Quantum {
                node,
                intent,
                token,
            } => self.on_quantum(node, intent, token),
            Ev::MetricReply {
                intent,
                query_id,
                metrics,
            } => {
                self.on_metric_reply(intent, query_id, metrics);
                Ok(())
            }
            Ev::RankDue { intent, query_id } => self.on_rank_due(intent, query_id),
            Ev::PackageArrive {
                intent,
                token,
                from,
                to,
                lost,
            } => self.on_package_arrive(intent, token, from, to, lost),
            Ev::AckTimeout { intent, token } => self.on_ack_timeout(intent, token),
            Ev::CheckpointArrive { store, package } => {
                self.on_checkpoint_arrive(store, *package);
                Ok(())
            }
            Ev::RecoveryFetch { intent, store } => self.on_recovery_fetch(intent, store),
            Ev::ResultArrive { intent } => self.on_result_arrive(intent),
        }
    }

    // ---- world queries ----

    fn shadowing(&self, u: UserId, n: NodeId) -> f64 {
        self.shadow.get(&(u, n)).copied().unwrap_or(0.0)
    }

    fn user_ctx(&self, u: UserId) -> ContextTag {
        let user = &self.users[&u];
        let now = self.now();
        let zone = position_at(&user.path, now)
            .map(|p| self.sc.zone_of(&p))
            .unwrap_or(crate::domain::ZoneId(0));
        ContextTag {
            zone,
            intent_version: user.spec.version_at(now),
        }
    }

    fn alive(&self, n: NodeId) -> bool {
        let node = &self.nodes[&n];
        node.up && node.link_up
    }

    fn can_talk(&self, a: NodeId, b: NodeId) -> bool {
        if !(self.alive(a) && self.alive(b)) {
            return false;
        }
        a == b
            || nodes_in_range(
                &self.sc.radio,
                &self.nodes[&a].profile,
                &self.nodes[&b].profile,
            )
    }

    fn has_room(&self, n: NodeId) -> bool {
        let node = &self.nodes[&n];
        node.profile
            .capability_class
            .max_hosted()
            .is_none_or(|m| node.hosted.len() < m)
    }

    fn can_host(&self, n: NodeId) -> bool {
        !self.nodes[&n].profile.is_rendezvous && self.alive(n) && self.has_room(n)
    }

    /// Closest connected node able to host, ties to the lower id.
    fn closest_host(&self, u: UserId, reachable_from: Option<NodeId>) -> Option<NodeId> {
        let user = &self.users[&u];
        let pos = position_at(&user.path, self.now()).ok()?;
        user.connected
            .iter()
            .copied()
            .filter(|n| self.can_host(*n))
            .filter(|n| reachable_from.is_none_or(|s| self.can_talk(s, *n)))
            .min_by(|a, b| {
                let da = pos.distance(&self.nodes[a].profile.position);
                let db = pos.distance(&self.nodes[b].profile.position);
                da.total_cmp(&db).then(a.cmp(b))
            })
    }

    /// Nearest rendezvous point; `linked` requires a live link from `from`.
    fn nearest_store(&self, from: NodeId, linked: bool) -> Option<NodeId> {
        let here = self.nodes[&from].profile.position;
        let pick = |need_link: bool, need_up: bool| {
            self.stores
                .keys()
                .copied()
                .filter(|s| !need_up || self.nodes[s].up)
                .filter(|s| !need_link || self.can_talk(from, *s))
                .min_by(|a, b| {
                    let da = here.distance(&self.nodes[a].profile.position);
                    let db = here.distance(&self.nodes[b].profile.position);
                    da.total_cmp(&db).then(a.cmp(b))
                })
        };
        if linked {
            pick(true, true)
        } else {
            pick(false, true).or_else(|| pick(false, false))
        }
    }

    fn audit(
        &mut self,
        near: NodeId,
        actor: NodeId,
        action: AuditAction,
        intent: IntentId,
        detail: serde_json::Value,
    ) {
        if let Some(s) = self.nearest_store(near, false) {
            let now = self.now();
            self.stores
                .get_mut(&s)
                .expect("store exists")
                .log(now, actor, action, intent, detail);
        }
    }

    fn session(&self, intent: IntentId) -> Option<&Session> {
        self.intents.get(&intent)?.session.as_ref()
    }

    fn session_mut(&mut self, intent: IntentId) -> Option<&mut Session> {
        self.intents.get_mut(&intent)?.session.as_mut()
    }

    fn set_phase(&mut self, intent: IntentId, to: Phase) -> Step {
        let sess = self.session_mut(intent).expect("session exists");
        let node = sess.s.host_node;
        let from = sess
            .s
            .transition(to)
            .map_err(|e| e.to_string())
            .map_err(|m| self.violation(m))?;
        self.emit(EventBody::PhaseChange {
            intent,
            node,
            from,
            to,
        });
        Ok(())
    }

    // ---- node scheduling ----

    fn detach(&mut self, intent: IntentId, n: NodeId) {
        let node = self.nodes.get_mut(&n).expect("node exists");
        if node.running.is_some_and(|(i, _)| i == intent) {
            node.running = None;
        }
        node.queue.retain(|i| *i != intent);
        node.hosted.remove(&intent);
    }

    fn pause(&mut self, intent: IntentId, n: NodeId) {
        let node = self.nodes.get_mut(&n).expect("node exists");
        if node.running.is_some_and(|(i, _)| i == intent) {
            node.running = None;
        }
        node.queue.retain(|i| *i != intent);
    }

    fn enqueue(&mut self, intent: IntentId, n: NodeId) -> Step {
        let node = self.nodes.get_mut(&n).expect("node exists");
        node.hosted.insert(intent);
        node.queue.push_back(intent);
        self.dispatch(n)
    }

    fn start_quantum(&mut self, n: NodeId, intent: IntentId) -> Step {
        if self
            .nodes
            .iter()
            .any(|(id, node)| *id != n && node.running.is_some_and(|(i, _)| i == intent))
        {
            return Err(self.violation(format!("{intent} executing on two nodes")));
        }
        let token = self.token();
        let now = self.now();
        let node = self.nodes.get_mut(&n).expect("node exists");
        node.running = Some((intent, token));
        let at = now + node.quantum;
        self.at(
            at,
            Ev::Quantum {
                node: n,
                intent,
                token,
            },
        );
        Ok(())
    }

    fn dispatch(&mut self, n: NodeId) -> Step {
        loop {
            let node = &self.nodes[&n];
            if node.running.is_some() || !node.up {
                return Ok(());
            }
            let Some(intent) = self.nodes.get_mut(&n).expect("node").queue.pop_front() else {
                return Ok(());
            };
            let ready = self
                .session(intent)
                .is_some_and(|s| s.s.host_node == n && s.s.phase == Phase::Executing);
            if ready {
                return self.start_quantum(n, intent);
            }
        }
    }

    // ---- users ----

    fn on_submit(&mut self, u: UserId) -> Step {
        self.refresh_user(u)?;
        let now = self.now();
        let ctx = self.user_ctx(u);
        let user = &self.users[&u];
        let template = user.spec.intent.clone();
        let context = ContextTag {
            zone: template.context_zone.unwrap_or(ctx.zone),
            intent_version: ctx.intent_version,
        };
        let intent = decompose(&template, u, now, context, &mut self.ids)
            .map_err(|e| self.violation(e.to_string()))?;
        let order_ids = intent
            .execution_order()
            .ok_or_else(|| self.violation("intent dependency graph has a cycle"))?;
        let order = order_ids
            .iter()
            .map(|id| {
                intent
                    .subtasks
                    .iter()
                    .position(|s| s.subtask_id == *id)
                    .expect("own id")
            })
            .collect();
        let id = intent.intent_id;
        self.emit(EventBody::IntentSubmitted {
            user: u,
            intent: intent.clone(),
        });
        self.intents.insert(
            id,
            IntentRt {
                ttl: intent.ttl.clone(),
                intent,
                order,
                user: u,
                status: Status::Pending { recover_from: None },
                lineage: 0,
                session: None,
                position: 0,
                executed: 0,
                recomputed: 0,
                outcomes: Vec::new(),
                last_host: NodeId(0),
                lost_at: now,
                latency_pct: 0,
            },
        );
        self.users.get_mut(&u).expect("user").intent = Some(id);
        self.try_dispatch(id)
    }

    fn on_tick(&mut self, u: UserId) -> Step {
        self.refresh_user(u)?;
        if self.mode == Mode::Waan {
            if let Some(intent) = self.users[&u].intent {
                let queued = self.session(intent).is_some_and(|s| {
                    s.s.phase == Phase::Executing
                        && self.nodes[&s.s.host_node]
                            .running
                            .is_none_or(|(i, _)| i != intent)
                });
                if queued {
                    self.maybe_trigger(intent)?;
                }
            }
        }
        let next = self.now() + self.sc.knobs.tick_ms;
        if next <= self.sc.end_time {
            self.at(next, Ev::Tick(u));
        }
        Ok(())
    }

    /// Re-samples the user's position and attachments, handling every change.
    fn refresh_user(&mut self, u: UserId) -> Step {
        let now = self.now();
        let user = &self.users[&u];
        let pos = position_at(&user.path, now).ok();
        let mut now_connected = BTreeSet::new();
        if let Some(p) = pos {
            for (id, n) in &self.nodes {
                if n.up
                    && n.link_up
                    && connected_with_offset(&self.sc.radio, p, &n.profile, self.shadowing(u, *id))
                {
                    now_connected.insert(*id);
                }
            }
        }
        let zone = pos.map(|p| self.sc.zone_of(&p));
        let old = std::mem::replace(
            &mut self.users.get_mut(&u).expect("user").connected,
            now_connected.clone(),
        );
        if let (Some(p), Some(z)) = (pos, zone) {
            if self.users[&u].zone != Some(z) {
                self.users.get_mut(&u).expect("user").zone = Some(z);
                self.emit(EventBody::UserMoved {
                    user: u,
                    position: p,
                    zone: z,
                });
            }
        }
        for n in old.difference(&now_connected).copied().collect::<Vec<_>>() {
            self.emit(EventBody::LinkLost { user: u, node: n });
            self.on_link_lost(u, n)?;
        }
        for n in now_connected.difference(&old).copied().collect::<Vec<_>>() {
            self.emit(EventBody::LinkEstablished { user: u, node: n });
            self.on_link_established(u)?;
        }
        Ok(())
    }

    fn on_link_lost(&mut self, u: UserId, n: NodeId) -> Step {
        let Some(intent) = self.users[&u].intent else {
            return Ok(());
        };
        let Some(sess) = self.session(intent) else {
            return Ok(());
        };
        if sess.s.host_node != n || self.intents[&intent].status != Status::Active {
            return Ok(());
        }
        match self.mode {
            Mode::Baseline => self.resubmit(intent, DropReason::LinkLost),
            // mid-handover link loss is what make-before-break is for
            Mode::Waan if sess.s.phase == Phase::Executing => {
                self.host_lost(intent, DropReason::LinkLost)
            }
            Mode::Waan => Ok(()),
        }
    }

    fn on_link_established(&mut self, u: UserId) -> Step {
        let Some(intent) = self.users[&u].intent else {
            return Ok(());
        };
        match self.intents[&intent].status {
            Status::Pending { recover_from: None } => self.try_dispatch(intent),
            Status::Pending {
                recover_from: Some(store),
            } => {
                self.intents.get_mut(&intent).expect("intent").status = Status::Recovering;
                let at = self.now() + self.sc.radio.base_link_latency;
                self.at(at, Ev::RecoveryFetch { intent, store });
                Ok(())
            }
            Status::Delivering { scheduled: false } => {
                self.try_deliver(intent);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn on_fault(&mut self, i: usize) -> Step {
        let f = self.sc.faults[i].clone();
        self.emit(EventBody::FaultInjected {
            node: f.node,
            action: f.action,
        });
        match f.action {
            FaultAction::LinkUp => {
                let node = self.nodes.get_mut(&f.node).expect("node");
                node.up = true;
                node.link_up = true;
            }
            FaultAction::LinkDown | FaultAction::NodeDown => {
                let node = self.nodes.get_mut(&f.node).expect("node");
                if f.action == FaultAction::NodeDown {
                    node.up = false;
                } else {
                    node.link_up = false;
                }
                node.running = None;
                node.queue.clear();
                let hosted: Vec<IntentId> = std::mem::take(&mut node.hosted).into_iter().collect();
                let reason = if f.action == FaultAction::NodeDown {
                    DropReason::NodeDown
                } else {
                    DropReason::LinkLost
                };
                for intent in hosted {
                    let Some(sess) = self.session(intent) else {
                        continue;
                    };
                    if sess.s.host_node != f.node {
                        continue;
                    }
                    match (self.mode, sess.s.phase) {
                        (Mode::Baseline, _) => self.resubmit(intent, reason)?,
                        (Mode::Waan, Phase::Executing | Phase::HandoverPreparing) => {
                            self.host_lost(intent, reason)?
                        }
                        // an in-flight package is retried through the rendezvous point
                        _ => {}
                    }
                }
            }
        }
        let users: Vec<UserId> = self.users.keys().copied().collect();
        for u in users {
            self.refresh_user(u)?;
        }
        self.dispatch(f.node)
    }

    // ---- lineage management ----

    fn try_dispatch(&mut self, intent: IntentId) -> Step {
        let u = self.intents[&intent].user;
        let Some(host) = self.closest_host(u, None) else {
            self.intents.get_mut(&intent).expect("intent").status =
                Status::Pending { recover_from: None };
            self.emit(EventBody::IntentPending {
                intent,
                awaiting_recovery: false,
            });
            return Ok(());
        };
        let now = self.now();
        let ir = self.intents.get_mut(&intent).expect("intent");
        let first = ir.sub(0);
        let state = TaskState::new(
            first.subtask_id,
            first.work_units,
            host,
            now,
            ir.ttl.context_tag,
        );
        ir.session = Some(Session {
            s: AgentSession::new(intent, host, state),
            sub: 0,
            since_checkpoint: 0,
            policy: None,
            no_retrigger: false,
            store: None,
            ho: None,
        });
        ir.status = Status::Active;
        ir.last_host = host;
        let lineage = ir.lineage;
        self.emit(EventBody::IntentDispatched {
            intent,
            node: host,
            lineage,
            resubmission: lineage > 0,
        });
        self.enqueue(intent, host)
    }

    /// Drops the current lineage and resubmits the intent from scratch.
    fn resubmit(&mut self, intent: IntentId, reason: DropReason) -> Step {
        let now = self.now();
        let u = self.intents[&intent].user;
        let ctx = self.user_ctx(u);
        if let Some(host) = self.session(intent).map(|s| s.s.host_node) {
            self.detach(intent, host);
            if !self.session(intent).expect("session").s.phase.is_terminal() {
                self.set_phase(intent, Phase::Failed)?;
            }
            self.dispatch(host)?;
        }
        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.session = None;
        let lost = ir.position;
        ir.recomputed += lost;
        ir.position = 0;
        ir.lineage += 1;
        ir.latency_pct = 0;
        ir.ttl.created_at = now;
        ir.ttl.context_tag = ContextTag {
            zone: self.users[&u].spec.intent.context_zone.unwrap_or(ctx.zone),
            intent_version: ctx.intent_version,
        };
        let node = ir.last_host;
        self.emit(EventBody::SessionDropped {
            intent,
            node,
            reason,
            lost_units: lost,
        });
        self.try_dispatch(intent)
    }

    /// WAAN reaction to losing the host outside a handover: recover from the
    /// last rendezvous checkpoint if there is one, else resubmit.
    fn host_lost(&mut self, intent: IntentId, reason: DropReason) -> Step {
        let sess = self.session(intent).expect("session");
        let host = sess.s.host_node;
        let store = sess.store;
        self.detach(intent, host);
        self.set_phase(intent, Phase::Failed)?;
        self.dispatch(host)?;
        let Some(store) = store else {
            return self.resubmit(intent, reason);
        };
        let now = self.now();
        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.session = None;
        ir.status = Status::Recovering;
        ir.lost_at = now;
        let at = now + self.sc.radio.base_link_latency;
        self.at(at, Ev::RecoveryFetch { intent, store });
        Ok(())
    }

    // ---- compute ----

    fn on_quantum(&mut self, n: NodeId, intent: IntentId, token: u64) -> Step {
        let now = self.now();
        let node = self.nodes.get_mut(&n).expect("node");
        if !(node.up && node.running == Some((intent, token))) {
            return Ok(());
        }
        node.running = None;
        node.busy_ms += node.quantum;
        node.executed += 1;

        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.executed += 1;
        ir.position += 1;
        let sess = ir.session.as_mut().expect("running session");
        let done = sess.s.current_state.executed_units + 1;
        sess.s.current_state.set_executed(done, now);
        sess.since_checkpoint += 1;
        let state = sess.s.current_state.clone();
        if !state.is_coherent() {
            return Err(self.violation(format!("{intent}: incoherent task state {state:?}")));
        }
        self.emit(EventBody::ComputeQuantumDone {
            node: n,
            intent,
            subtask: state.subtask_id,
            executed_units: state.executed_units,
            work_units: state.work_units,
        });

        if state.is_complete() {
            self.emit(EventBody::SubtaskCompleted {
                node: n,
                intent,
                subtask: state.subtask_id,
            });
            let ir = self.intents.get_mut(&intent).expect("intent");
            let next = ir.session.as_ref().expect("session").sub + 1;
            if next == ir.order.len() {
                return self.complete_compute(intent);
            }
            let sub = ir.sub(next);
            let st = TaskState::new(sub.subtask_id, sub.work_units, n, now, ir.ttl.context_tag);
            let sess = ir.session.as_mut().expect("session");
            sess.sub = next;
            sess.s.current_state = st;
        }

        if self.mode == Mode::Waan {
            if self.session(intent).expect("session").since_checkpoint
                >= self.sc.knobs.checkpoint_every_units
            {
                self.checkpoint(intent);
            }
            if self.maybe_trigger(intent)? {
                return self.dispatch(n);
            }
        }
        self.start_quantum(n, intent)
    }

    fn complete_compute(&mut self, intent: IntentId) -> Step {
        self.set_phase(intent, Phase::Completed)?;
        let host = self.session(intent).expect("session").s.host_node;
        self.detach(intent, host);
        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.last_host = host;
        ir.status = Status::Delivering { scheduled: false };
        self.try_deliver(intent);
        self.dispatch(host)
    }

    fn try_deliver(&mut self, intent: IntentId) {
        let u = self.intents[&intent].user;
        if self.users[&u].connected.is_empty() {
            return;
        }
        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.status = Status::Delivering { scheduled: true };
        let l = self.sc.radio.base_link_latency;
        let delay = l * u64::from(100 - ir.latency_pct.min(100)) / 100;
        let at = self.now() + delay;
        self.at(at, Ev::ResultArrive { intent });
    }

    fn on_result_arrive(&mut self, intent: IntentId) -> Step {
        let now = self.now();
        let (u, host, ttl, submitted, max_latency) = {
            let ir = &self.intents[&intent];
            (
                ir.user,
                ir.last_host,
                ir.ttl.clone(),
                ir.intent.submitted_at,
                ir.intent.qoe.max_latency,
            )
        };
        let ctx = self.user_ctx(u);
        let valid = crate::handover::ttl_valid(&ttl, now, &ctx);
        self.emit(EventBody::TtlVerdict {
            intent,
            node: host,
            purpose: TtlPurpose::Result,
            valid,
            relevance: relevance(&ttl.context_tag, &ctx),
            ttl: ttl.clone(),
            ctx_now: ctx,
        });
        self.audit(
            host,
            host,
            AuditAction::TtlVerdict,
            intent,
            json!({"purpose": "result", "valid": valid}),
        );
        let completion = now - submitted;
        let qoe_met = valid && completion <= max_latency;
        if valid {
            self.emit(EventBody::ResultDelivered {
                intent,
                user: u,
                host,
                completion_time: completion,
                qoe_met,
            });
            let ir = &self.intents[&intent];
            if ir.executed != ir.intent.total_work() + ir.recomputed {
                return Err(self.violation(format!(
                    "{intent}: executed {} != work {} + recomputed {}",
                    ir.executed,
                    ir.intent.total_work(),
                    ir.recomputed
                )));
            }
        } else {
            self.emit(EventBody::ResultDiscarded {
                intent,
                user: u,
                host,
            });
        }
        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.status = if valid { Status::Done } else { Status::Failed };
        let logged = std::mem::take(&mut ir.outcomes);
        for o in logged {
            let ctx = OutcomeContext {
                bucket: o.bucket,
                chosen: o.chosen,
                qoe_met,
                completion_latency: valid.then_some(completion),
            };
            self.adapt
                .get_mut(&o.decider)
                .expect("every node has an agent")
                .absorb(o.outcome, ctx);
        }
        Ok(())
    }

    // ---- checkpoints ----

    fn policy_snapshot(&self, intent: IntentId) -> PolicySnapshot {
        let sess = self.session(intent).expect("session");
        let agent = &self.adapt[&sess.s.host_node];
        PolicySnapshot {
            weights: sess.policy.as_ref().map_or(agent.weights, |p| p.weights),
            stats: agent.log.global(),
            encoded_bytes: self.sc.knobs.policy_overhead_bytes,
        }
    }

    fn snapshot_package(&mut self, intent: IntentId) -> HandoverPackage {
        let policy = self.policy_snapshot(intent);
        let ir = &self.intents[&intent];
        let sess = ir.session.as_ref().expect("session");
        let host = sess.s.host_node;
        let mut pkg = HandoverPackage {
            package_id: self.ids.package(),
            intent_id: intent,
            task_state: sess.s.current_state.clone(),
            state_size_fn: ir.sub(sess.sub).state_size_fn,
            policy_snapshot: policy,
            ttl: ir.ttl.clone(),
            link_params: LinkParams::filler(self.sc.knobs.link_params_bytes, host.0),
            ranked_fallbacks: Vec::new(),
            size_bytes: 0,
        };
        pkg.size_bytes = crate::domain::package_size(&pkg).max(1);
        pkg
    }

    fn checkpoint(&mut self, intent: IntentId) {
        let host = self.session(intent).expect("session").s.host_node;
        let Some(store) = self.nearest_store(host, true) else {
            return;
        };
        let pkg = self.snapshot_package(intent);
        let x = transfer_time(
            pkg.size_bytes,
            self.nodes[&host].spec.bandwidth,
            self.nodes[&store].spec.bandwidth,
            &self.sc.radio,
        );
        let arrives_at = self.now() + x;
        let sess = self.session_mut(intent).expect("session");
        sess.store = Some(store);
        sess.since_checkpoint = 0;
        self.emit(EventBody::CheckpointDue {
            intent,
            from: host,
            store,
            package_id: pkg.package_id,
            arrives_at,
        });
        self.at(
            arrives_at,
            Ev::CheckpointArrive {
                store,
                package: Box::new(pkg),
            },
        );
    }

    fn on_checkpoint_arrive(&mut self, store: NodeId, pkg: HandoverPackage) {
        let stored = self.alive(store);
        self.emit(EventBody::CheckpointStored {
            intent: pkg.intent_id,
            store,
            package_id: pkg.package_id,
            stored,
        });
        if stored {
            let now = self.now();
            self.stores
                .get_mut(&store)
                .expect("store")
                .checkpoint(pkg, now);
        }
    }

    // ---- handover ----

    fn t_prepare(&self, intent: IntentId) -> u64 {
        if let Some(t) = self.sc.knobs.t_prepare_ms {
            return t;
        }
        let ir = &self.intents[&intent];
        let sess = ir.session.as_ref().expect("session");
        let k = &self.sc.knobs;
        let bytes = ir
            .sub(sess.sub)
            .state_size_fn
            .bytes_at(sess.s.current_state.progress)
            + k.policy_overhead_bytes
            + k.link_params_bytes as u64;
        let bw = self.nodes[&sess.s.host_node].spec.bandwidth;
        2 * transfer_time(bytes, bw, bw, &self.sc.radio) + k.swarm_deadline_ms
    }

    /// Checks the trigger rule; on firing pauses execution, checkpoints and
    /// launches the swarm query.
    fn maybe_trigger(&mut self, intent: IntentId) -> Result<bool, RunError> {
        let Some(sess) = self.session(intent) else {
            return Ok(false);
        };
        if sess.s.phase != Phase::Executing || sess.no_retrigger {
            return Ok(false);
        }
        let host = sess.s.host_node;
        let u = self.intents[&intent].user;
        let now = self.now();
        let profile = &self.nodes[&host].profile;
        let radius = coverage_radius(&self.sc.radio, profile, self.shadowing(u, host));
        let Ok(Some(exit)) =
            predict_exit(&self.users[&u].path, profile, radius, now, self.sc.end_time)
        else {
            return Ok(false);
        };
        let t_prep = self.t_prepare(intent);
        let sess = self.session_mut(intent).expect("session");
        if !trigger_handover(&mut sess.s, Some(exit), now, t_prep) {
            return Ok(false);
        }
        let progress = sess.s.current_state.progress;
        self.emit(EventBody::PhaseChange {
            intent,
            node: host,
            from: Phase::Executing,
            to: Phase::HandoverPreparing,
        });
        self.emit(EventBody::HandoverTriggered {
            intent,
            node: host,
            predicted_exit: exit,
            t_prepare: t_prep,
            progress,
        });
        self.pause(intent, host);
        if self.session(intent).expect("session").since_checkpoint > 0 {
            self.checkpoint(intent);
        }
        self.start_query(intent);
        Ok(true)
    }

    fn sample_metrics(&self, u: UserId, n: NodeId, at: SimTime) -> NodeMetrics {
        let node = &self.nodes[&n];
        let user = &self.users[&u];
        let load = node.hosted.len() as f64;
        let d = position_at(&user.path, at)
            .map(|p| p.distance(&node.profile.position))
            .unwrap_or(f64::MAX);
        let off = self.shadowing(u, n);
        NodeMetrics {
            node_id: n,
            sampled_at: at,
            cpu_load: (node.spec.cpu_load + LOAD_PER_SESSION * load).min(1.0),
            mem_used: (node.spec.mem_used + MEM_PER_SESSION * load).min(1.0),
            bandwidth_avail: node.spec.bandwidth,
            rssi: self.sc.radio.rssi(d) + off,
            snr: self.sc.radio.snr(d) + off,
            mobility_speed: user.path.speed_at(at),
            traffic_type: node.spec.traffic_type,
        }
    }

    fn start_query(&mut self, intent: IntentId) {
        let host = self.session(intent).expect("session").s.host_node;
        let u = self.intents[&intent].user;
        let now = self.now();
        let k = &self.sc.knobs;
        let candidates: Vec<NodeId> = discover_neighbors(host, &self.profiles, &self.sc.radio)
            .expect("host is a known node")
            .into_iter()
            .filter(|n| !self.nodes[n].profile.is_rendezvous && self.has_room(*n))
            .collect();
        let query_id = self.next_query;
        self.next_query += 1;
        let query = SwarmQuery {
            query_id,
            origin_node: host,
            candidate_set: candidates.clone(),
            issued_at: now,
            deadline: k.swarm_deadline_ms,
        };
        self.emit(EventBody::MetricQuery {
            intent,
            query: query.clone(),
        });
        let l = self.sc.radio.base_link_latency;
        let env = SnapshotEnv {
            reachable: candidates
                .iter()
                .copied()
                .filter(|c| self.can_talk(host, *c))
                .collect(),
            metrics: candidates
                .iter()
                .map(|c| (*c, self.sample_metrics(u, *c, now + l)))
                .collect(),
            latency: l,
            jitter: k.metric_jitter_ms,
        };
        let replies = collect_metrics(&query, &env, &mut self.rng.link);
        let due = if replies.len() == candidates.len() {
            replies.iter().map(|r| r.arrives_at).max().unwrap_or(now)
        } else {
            now + k.swarm_deadline_ms
        };
        let expected = replies.len();
        for r in replies {
            self.at(
                r.arrives_at,
                Ev::MetricReply {
                    intent,
                    query_id,
                    metrics: r.metrics,
                },
            );
        }
        self.at(due, Ev::RankDue { intent, query_id });
        self.session_mut(intent).expect("session").ho = Some(Ho {
            query_id,
            expected,
            replies: Vec::new(),
            ranked: false,
            started_at: now,
            origin: host,
            sender: host,
            kind: TransferKind::StateTransfer,
            package: None,
            targets: Vec::new(),
            attempt: 0,
            token: 0,
            delivered: false,
            decider: host,
            bucket: None,
            chosen: None,
            recomputed: 0,
            progress: 0.0,
        });
    }

    fn live_ho(&mut self, intent: IntentId, query_id: u64) -> Option<&mut Ho> {
        let sess = self.session_mut(intent)?;
        if sess.s.phase != Phase::HandoverPreparing {
            return None;
        }
        sess.ho
            .as_mut()
            .filter(|h| h.query_id == query_id && !h.ranked)
    }

    fn on_metric_reply(&mut self, intent: IntentId, query_id: u64, metrics: NodeMetrics) {
        let Some(ho) = self.live_ho(intent, query_id) else {
            return;
        };
        debug_assert!(ho.replies.len() < ho.expected);
        ho.replies.push(metrics.clone());
        self.emit(EventBody::MetricReply {
            intent,
            query_id,
            metrics,
        });
    }

    fn bucket(&self, u: UserId, target: NodeId) -> BucketKey {
        let ir_traffic = self.users[&u].spec.intent.traffic_type;
        BucketKey {
            traffic_type: ir_traffic,
            speed_band: SpeedBand::of(self.users[&u].path.speed_at(self.now())),
            capability_class: self.nodes[&target].profile.capability_class,
        }
    }

    fn on_rank_due(&mut self, intent: IntentId, query_id: u64) -> Step {
        let Some(ho) = self.live_ho(intent, query_id) else {
            return Ok(());
        };
        ho.ranked = true;
        let replies = std::mem::take(&mut ho.replies);
        let now = self.now();
        let k = &self.sc.knobs;
        let u = self.intents[&intent].user;
        let host = self.session(intent).expect("session").s.host_node;
        let path = &self.users[&u].path;
        let user_state = UserState {
            position: position_at(path, now).map_err(|e| self.violation(e.to_string()))?,
            velocity: path.velocity_at(now),
            traffic_type: self.intents[&intent].intent.qoe.traffic_type,
        };
        let mut inputs = Vec::new();
        for m in discard_stale(replies, now, k.staleness_max_ms) {
            let prof = &self.nodes[&m.node_id].profile;
            let disc = CoverageDisc {
                center: prof.position,
                radius: coverage_radius(&self.sc.radio, prof, self.shadowing(u, m.node_id)),
            };
            let c = normalize_metrics(&m, &user_state, disc, &k.normalization)
                .map_err(|e| self.violation(e.to_string()))?;
            inputs.push((m, c));
        }
        let weights = self.policy_snapshot(intent).weights;
        let ranking = rank_candidates(&inputs, &weights, now);
        self.emit(EventBody::CandidatesRanked {
            intent,
            query_id,
            weights,
            ranking: ranking.clone(),
        });

        let Some(best) = ranking.first() else {
            // NoCandidate: keep executing at the source
            let outcome = HandoverOutcome {
                intent_id: intent,
                source: host,
                target: host,
                attempt_index: 1,
                started_at: self
                    .session(intent)
                    .and_then(|s| s.ho.as_ref())
                    .map_or(now, |h| h.started_at),
                finished_at: now,
                result: HandoverResult::Abort,
                transfer_kind: TransferKind::StateTransfer,
                progress_at_transfer: self
                    .session(intent)
                    .expect("session")
                    .s
                    .current_state
                    .progress,
                recomputed_units: 0,
            };
            let bucket = self.bucket(u, host);
            self.finalize_outcome(outcome, host, bucket, None)?;
            let sess = self.session_mut(intent).expect("session");
            sess.ho = None;
            sess.no_retrigger = true;
            self.set_phase(intent, Phase::Executing)?;
            return self.enqueue(intent, host);
        };

        let target = best.node_id;
        let chosen = best.components;
        let bucket = self.bucket(u, target);
        let ir = &self.intents[&intent];
        let sess = ir.session.as_ref().expect("session");
        let sub = ir.sub(sess.sub).clone();
        let state = sess.s.current_state.clone();
        let decision = decide_transfer_kind(
            &self.adapt[&host].log,
            &TransferCostInputs {
                state_bytes: sub.state_size_fn.bytes_at(state.progress),
                input_bytes: sub.input_size,
                executed_units: state.executed_units,
                quantum_ms: self.nodes[&target].quantum,
                src_bandwidth: self.nodes[&host].spec.bandwidth,
                dst_bandwidth: self.nodes[&target].spec.bandwidth,
                radio: &self.sc.radio,
            },
            &bucket,
            k.few_shot_k_min,
        );
        let session = sess.s.clone();
        let ttl = ir.ttl.clone();
        let link = LinkParams::filler(k.link_params_bytes, host.0);
        self.emit(EventBody::TransferDecision { intent, decision });

        let policy = self.policy_snapshot(intent);
        let (primary, mut pkg) = build_package(
            &session,
            &ranking,
            policy,
            &ttl,
            link,
            sub.state_size_fn,
            &mut self.ids,
        )
        .map_err(|e| self.violation(e.to_string()))?;

        let mut recomputed = 0;
        if decision.kind == TransferKind::FullOffload {
            recomputed = u64::from(state.executed_units);
            pkg.task_state =
                TaskState::new(sub.subtask_id, sub.work_units, host, now, state.context_tag);
            pkg.size_bytes = (sub.input_size
                + pkg.policy_snapshot.encoded_bytes
                + pkg.link_params.0.len() as u64)
                .max(1);
            let ir = self.intents.get_mut(&intent).expect("intent");
            ir.position -= recomputed;
            ir.recomputed += recomputed;
            let sess = ir.session.as_mut().expect("session");
            sess.s.current_state = pkg.task_state.clone();
            self.emit(EventBody::SessionDropped {
                intent,
                node: host,
                reason: DropReason::FullOffload,
                lost_units: recomputed,
            });
        }

        let sess = self.session_mut(intent).expect("session");
        sess.s.ranked_fallbacks = pkg.ranked_fallbacks.clone();
        let ho = sess.ho.as_mut().expect("handover");
        ho.kind = decision.kind;
        ho.targets = std::iter::once(primary)
            .chain(pkg.ranked_fallbacks.iter().copied())
            .collect();
        ho.package = Some(pkg);
        ho.decider = host;
        ho.bucket = Some(bucket);
        ho.chosen = Some(chosen);
        ho.recomputed = recomputed;
        ho.progress = state.progress;
        self.send_attempt(intent, 0)
    }

    /// Sends the package to `targets[idx]`. The source sends while it is
    /// alive, otherwise the rendezvous point relays its cached copy; targets
    /// that neither can serve are skipped. Aborts when the ranking is exhausted.
    fn send_attempt(&mut self, intent: IntentId, mut idx: usize) -> Step {
        loop {
            let ho = self
                .session(intent)
                .and_then(|s| s.ho.as_ref())
                .expect("handover");
            let Some(&to) = ho.targets.get(idx) else {
                return self.abort_handover(intent);
            };
            let sender = ho.sender;
            let store = self.session(intent).and_then(|s| s.store);
            let from = if self.alive(sender) {
                Some(sender)
            } else {
                store.filter(|s| self.can_talk(*s, to) && self.stores[s].entry(intent).is_some())
            };
            let Some(from) = from else {
                idx += 1;
                continue;
            };
            if from != sender {
                let ctx = self.user_ctx(self.intents[&intent].user);
                let now = self.now();
                let relayed = self
                    .stores
                    .get_mut(&from)
                    .expect("store")
                    .recover(intent, to, now, &ctx);
                self.emit(EventBody::RecoveryFetch {
                    intent,
                    store: from,
                    target: Some(to),
                    hit: relayed.is_some(),
                });
                if relayed.is_none() {
                    idx += 1;
                    continue;
                }
            }
            return self.transmit(intent, from, to, idx as u32 + 1);
        }
    }

    fn transmit(&mut self, intent: IntentId, from: NodeId, to: NodeId, attempt: u32) -> Step {
        self.set_phase(intent, Phase::Transferring)?;
        let now = self.now();
        let p = self.sc.knobs.package_loss_prob;
        let dropped = p > 0.0 && self.rng.loss.random_bool(p);
        let lost = dropped || !self.can_talk(from, to);
        let token = self.token();
        let pkg = self
            .session(intent)
            .and_then(|s| s.ho.as_ref())
            .and_then(|h| h.package.clone())
            .expect("package built");
        let x = transfer_time(
            pkg.size_bytes,
            self.nodes[&from].spec.bandwidth,
            self.nodes[&to].spec.bandwidth,
            &self.sc.radio,
        );
        let ho = self
            .session_mut(intent)
            .and_then(|s| s.ho.as_mut())
            .expect("handover");
        ho.attempt = attempt;
        ho.token = token;
        self.emit(EventBody::PackageSent {
            intent,
            from,
            to,
            attempt,
            arrives_at: now + x,
            package: pkg,
        });
        self.at(
            now + x,
            Ev::PackageArrive {
                intent,
                token,
                from,
                to,
                lost,
            },
        );
        let timeout = now + 2 * x + self.sc.radio.base_link_latency;
        self.at(timeout, Ev::AckTimeout { intent, token });
        Ok(())
    }

    fn current_ho(&self, intent: IntentId, token: u64) -> Option<&Ho> {
        self.session(intent)?
            .ho
            .as_ref()
            .filter(|h| h.token == token && !h.delivered)
    }

    fn on_package_arrive(
        &mut self,
        intent: IntentId,
        token: u64,
        from: NodeId,
        to: NodeId,
        lost: bool,
    ) -> Step {
        let Some(ho) = self.current_ho(intent, token) else {
            return Ok(());
        };
        let attempt = ho.attempt;
        let pkg = ho.package.clone().expect("package");
        if lost || !self.can_talk(from, to) {
            self.emit(EventBody::PackageLost {
                intent,
                package_id: pkg.package_id,
                to,
                attempt,
            });
            return Ok(());
        }
        self.session_mut(intent)
            .and_then(|s| s.ho.as_mut())
            .expect("ho")
            .delivered = true;
        self.emit(EventBody::PackageDelivered {
            intent,
            package_id: pkg.package_id,
            to,
            attempt,
        });
        self.set_phase(intent, Phase::AwaitingAck)?;

        let now = self.now();
        let u = self.intents[&intent].user;
        let ctx = self.user_ctx(u);
        let verdict = resume(&pkg, to, now, &ctx);
        let valid = verdict.is_ok();
        self.emit(EventBody::TtlVerdict {
            intent,
            node: to,
            purpose: TtlPurpose::Resume,
            valid,
            relevance: relevance(&pkg.ttl.context_tag, &ctx),
            ttl: pkg.ttl.clone(),
            ctx_now: ctx,
        });
        self.audit(
            to,
            to,
            AuditAction::TtlVerdict,
            intent,
            json!({"purpose": "resume", "valid": valid, "package_id": pkg.package_id}),
        );

        let ho = self
            .session_mut(intent)
            .and_then(|s| s.ho.take())
            .expect("ho");
        let bucket = ho.bucket.unwrap_or_else(|| self.bucket(u, to));
        let result = match (&verdict, attempt) {
            (Err(_), _) => HandoverResult::Abort,
            (Ok(_), 1) => HandoverResult::Success,
            (Ok(_), _) => HandoverResult::FallbackSuccess,
        };
        let outcome = HandoverOutcome {
            intent_id: intent,
            source: ho.origin,
            target: to,
            attempt_index: attempt,
            started_at: ho.started_at,
            finished_at: now,
            result,
            transfer_kind: ho.kind,
            progress_at_transfer: ho.progress,
            recomputed_units: u32::try_from(ho.recomputed).unwrap_or(u32::MAX),
        };
        self.finalize_outcome(outcome, ho.decider, bucket, ho.chosen)?;

        let resumed = match verdict {
            Ok(s) => s,
            Err(_) => return self.resubmit(intent, DropReason::StaleContext),
        };
        self.set_phase(intent, Phase::Resuming)?;
        let old_host = self.session(intent).expect("session").s.host_node;
        self.detach(intent, old_host);
        self.dispatch(old_host)?;
        let sub = self.session(intent).expect("session").sub;
        let store = self.session(intent).expect("session").store;
        let state = resumed.current_state.clone();
        let ir = self.intents.get_mut(&intent).expect("intent");
        ir.last_host = to;
        ir.status = Status::Active;
        ir.latency_pct = self.sc.knobs.link_latency_reduction_pct;
        ir.session = Some(Session {
            s: resumed,
            sub,
            since_checkpoint: 0,
            policy: Some(pkg.policy_snapshot.clone()),
            no_retrigger: false,
            store,
            ho: None,
        });
        self.emit(EventBody::PhaseChange {
            intent,
            node: to,
            from: Phase::Resuming,
            to: Phase::Executing,
        });
        self.emit(EventBody::SessionResumed {
            intent,
            node: to,
            state,
            control_channel: to,
            latency_reduction_pct: self.sc.knobs.link_latency_reduction_pct,
        });
        self.enqueue(intent, to)
    }

    fn on_ack_timeout(&mut self, intent: IntentId, token: u64) -> Step {
        let Some(ho) = self.current_ho(intent, token) else {
            return Ok(());
        };
        let attempt = ho.attempt;
        let target = ho.targets[attempt as usize - 1];
        self.emit(EventBody::AckTimeout {
            intent,
            target,
            attempt,
        });
        self.send_attempt(intent, attempt as usize)
    }

    fn abort_handover(&mut self, intent: IntentId) -> Step {
        let now = self.now();
        let u = self.intents[&intent].user;
        let ho = self
            .session_mut(intent)
            .and_then(|s| s.ho.take())
            .expect("handover");
        let target = ho
            .targets
            .get(ho.attempt.max(1) as usize - 1)
            .copied()
            .unwrap_or(ho.origin);
        let outcome = HandoverOutcome {
            intent_id: intent,
            source: ho.origin,
            target,
            attempt_index: ho.attempt.max(1),
            started_at: ho.started_at,
            finished_at: now,
            result: HandoverResult::Abort,
            transfer_kind: ho.kind,
            progress_at_transfer: ho.progress,
            recomputed_units: u32::try_from(ho.recomputed).unwrap_or(u32::MAX),
        };
        let bucket = ho.bucket.unwrap_or_else(|| self.bucket(u, target));
        self.finalize_outcome(outcome, ho.decider, bucket, ho.chosen)?;
        self.resubmit(intent, DropReason::Abort)
    }

    fn finalize_outcome(
        &mut self,
        outcome: HandoverOutcome,
        decider: NodeId,
        bucket: BucketKey,
        chosen: Option<Components>,
    ) -> Step {
        let v = outcome.invariant_violations();
        if !v.is_empty() {
            return Err(self.violation(format!("handover outcome: {}", v.join(", "))));
        }
        let intent = outcome.intent_id;
        self.emit(EventBody::HandoverOutcome {
            outcome: outcome.clone(),
        });
        self.audit(
            decider,
            decider,
            AuditAction::HandoverDecision,
            intent,
            json!({
                "source": outcome.source,
                "target": outcome.target,
                "attempt": outcome.attempt_index,
                "result": outcome.result,
                "transfer_kind": outcome.transfer_kind,
            }),
        );
        self.intents
            .get_mut(&intent)
            .expect("intent")
            .outcomes
            .push(LoggedOutcome {
                decider,
                outcome,
                bucket,
                chosen,
            });
        Ok(())
    }

    // ---- rendezvous recovery ----

    fn on_recovery_fetch(&mut self, intent: IntentId, store: NodeId) -> Step {
        if self.intents[&intent].status != Status::Recovering {
            return Ok(());
        }
        let u = self.intents[&intent].user;
        if !self.alive(store) {
            self.emit(EventBody::RecoveryFetch {
                intent,
                store,
                target: None,
                hit: false,
            });
            return self.resubmit(intent, DropReason::Recovery);
        }
        let Some(target) = self.closest_host(u, Some(store)) else {
            self.emit(EventBody::RecoveryFetch {
                intent,
                store,
                target: None,
                hit: false,
            });
            self.intents.get_mut(&intent).expect("intent").status = Status::Pending {
                recover_from: Some(store),
            };
            self.emit(EventBody::IntentPending {
                intent,
                awaiting_recovery: true,
            });
            return Ok(());
        };
        let now = self.now();
        let ctx = self.user_ctx(u);
        let pkg = self
            .stores
            .get_mut(&store)
            .expect("store")
            .recover(intent, target, now, &ctx);
        self.emit(EventBody::RecoveryFetch {
            intent,
            store,
            target: Some(target),
            hit: pkg.is_some(),
        });
        let Some(pkg) = pkg else {
            return self.resubmit(intent, DropReason::Recovery);
        };
        let ir = self.intents.get_mut(&intent).expect("intent");
        let sub = ir
            .index_of(pkg.task_state.subtask_id)
            .expect("checkpoint names a subtask of its intent");
        let restored = ir.prefix_units(sub) + u64::from(pkg.task_state.executed_units);
        let lost = ir
            .position
            .checked_sub(restored)
            .expect("checkpoints never run ahead");
        ir.position = restored;
        ir.recomputed += lost;
        let origin = ir.last_host;
        let started_at = ir.lost_at;
        let mut s = AgentSession::new(intent, store, pkg.task_state.clone());
        s.phase = Phase::HandoverPreparing;
        ir.session = Some(Session {
            s,
            sub,
            since_checkpoint: 0,
            policy: Some(pkg.policy_snapshot.clone()),
            no_retrigger: false,
            store: Some(store),
            ho: Some(Ho {
                query_id: 0,
                expected: 0,
                replies: Vec::new(),
                ranked: true,
                started_at,
                origin,
                sender: store,
                kind: TransferKind::RendezvousRecovery,
                progress: pkg.task_state.progress,
                package: Some(pkg),
                targets: vec![target],
                attempt: 0,
                token: 0,
                delivered: false,
                decider: target,
                bucket: None,
                chosen: None,
                recomputed: lost,
            }),
        });
        ir.status = Status::Active;
        self.emit(EventBody::SessionDropped {
            intent,
            node: origin,
            reason: DropReason::Recovery,
            lost_units: lost,
        });
        self.send_attempt(intent, 0)
    }

    // ---- end of run ----

    fn finish(mut self) -> Result<RunOutput, RunError> {
        for (id, n) in &self.nodes {
            if n.busy_ms != n.executed * n.quantum {
                return Err(
                    self.violation(format!("{id}: busy time does not match executed quanta"))
                );
            }
        }
        for (id, s) in &self.stores {
            let v = audit_violations(s.audit_export());
            if !v.is_empty() {
                return Err(self.violation(format!("{id} audit: {}", v.join(", "))));
            }
        }
        let unfinished = self
            .intents
            .iter()
            .filter(|(_, ir)| !matches!(ir.status, Status::Done | Status::Failed))
            .map(|(id, _)| *id)
            .collect();
        let agents = self
            .nodes
            .iter()
            .map(|(id, n)| {
                let a = &self.adapt[id];
                AgentDump {
                    node: *id,
                    weights: a.weights,
                    busy_ms: n.busy_ms,
                    executed_units: n.executed,
                    outcomes_logged: a.log.records().len(),
                    buckets: a
                        .log
                        .buckets()
                        .map(|(k, s)| BucketDump { key: *k, stats: *s })
                        .collect(),
                }
            })
            .collect();
        self.trace.push(TraceLine::End(TraceEnd {
            t: self.now(),
            events_processed: self.processed,
            unfinished,
            agents,
        }));
        Ok(RunOutput {
            trace: self.trace,
            stores: self.stores,
        })
    }
}
