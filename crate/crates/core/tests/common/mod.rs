//! Scenario generators and small oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use waan::domain::{
    CapabilityClass, ContextTag, IntentTemplate, NodeId, Position, SemanticTtl, SubtaskKind,
    SubtaskTemplate, TrafficType, UserId,
};
use waan::handover::HandoverOutcome;
use waan::kernel::mobility::Bounds;
use waan::scenario::{FaultAction, FaultInjection, Knobs, MobilitySpec, NodeSpec, UserSpec};
use waan::trace::{events, EventBody, TraceLine};
use waan::{load_scenario, Scenario};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_path(name: &str) -> PathBuf {
    repo_root()
        .join("scenarios")
        .join(format!("{name}.scenario"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every `*.scenario` shipped in the repo, sorted by file name.
pub fn all_scenarios() -> Vec<(String, Scenario)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(repo_root().join("scenarios"))
        .expect("scenarios dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let sc = load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (name, sc)
        })
        .collect()
}

fn node(id: u32, x: f64, y: f64, radius: f64, cpu: f64, bw: f64) -> NodeSpec {
    NodeSpec {
        id: NodeId(id),
        name: String::new(),
        position: Position::new(x, y),
        coverage_radius: radius,
        capability: CapabilityClass::EdgeNode,
        cpu_capacity: cpu,
        mem_capacity: 1 << 30,
        rendezvous: false,
        bandwidth: bw,
        cpu_load: 0.2,
        mem_used: 0.3,
        traffic_type: TrafficType::Interactive,
    }
}

/// One random-waypoint user over a 3x3 grid (100 m spacing, 75 m coverage)
/// with a rendezvous point at the centre. Node speeds, uplinks, loads and the
/// intent's work are drawn from `seed`; the path is drawn from the run seed.
pub fn grid_variant(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut sc = scenario("casestudy");
    sc.name = format!("grid-variant-{seed}");
    sc.description.clear();
    sc.world = Bounds {
        min: Position::new(0.0, 0.0),
        max: Position::new(300.0, 300.0),
    };
    sc.end_time = 400_000;
    sc.zones.clear();
    sc.faults.clear();
    sc.knobs = Knobs {
        t_prepare_ms: Some(1500),
        ..Knobs::default()
    };
    let cpus = [5.0, 10.0, 20.0, 25.0];
    sc.nodes = (0..9)
        .map(|i| {
            let (gx, gy) = (i % 3, i / 3);
            let mut n = node(
                i + 1,
                50.0 + 100.0 * f64::from(gx),
                50.0 + 100.0 * f64::from(gy),
                75.0,
                cpus[rng.random_range(0..cpus.len())],
                rng.random_range(1.0e6..5.0e6),
            );
            n.cpu_load = rng.random_range(0.0..0.8);
            n.mem_used = rng.random_range(0.0..0.8);
            n
        })
        .collect();
    let mut r = node(10, 150.0, 150.0, 75.0, 10.0, 5.0e6);
    r.rendezvous = true;
    sc.nodes.push(r);

    let sub = |rng: &mut ChaCha8Rng, kind, deps: Vec<usize>| {
        let input = rng.random_range(10_000..200_000u64);
        SubtaskTemplate {
            kind,
            work_units: rng.random_range(50..300),
            input_bytes: input,
            // intermediate state stays well below the input size
            state_base_bytes: (input / 20) as f64,
            state_slope_bytes: (input / 5) as f64,
            depends_on: deps,
        }
    };
    let subtasks = vec![
        sub(&mut rng, SubtaskKind::SensorFusion, vec![]),
        sub(&mut rng, SubtaskKind::MultimodalSummarization, vec![0]),
        sub(&mut rng, SubtaskKind::EnvironmentControl, vec![1]),
    ];
    let vmin = rng.random_range(0.5..2.0);
    sc.users = vec![UserSpec {
        id: UserId(1),
        submit_at: 1000,
        mobility: MobilitySpec::RandomWaypoint {
            speed_min: vmin,
            speed_max: vmin + rng.random_range(0.5..3.0),
            bounds: None,
            pause_ms: 0,
            start_at: 0,
        },
        intent: IntentTemplate {
            subtasks,
            max_latency_ms: 120_000,
            min_accuracy: 0.9,
            traffic_type: TrafficType::Interactive,
            time_budget_ms: 350_000,
            relevance_threshold: 0.5,
            context_zone: None,
        },
        revisions_at: vec![],
    }];
    sc.validate().expect("generated grid scenario is valid");
    sc
}

/// Case-study geometry with seeded perturbations of the start point, M's
/// position and the node uplinks.
pub fn casestudy_variant(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let mut sc = scenario("casestudy");
    sc.name = format!("casestudy-variant-{seed}");
    let x0 = rng.random_range(0.0..5.25);
    if let MobilitySpec::Scripted { waypoints } = &mut sc.users[0].mobility {
        waypoints[0].position.x = x0;
        waypoints[1].position.x = x0 + 150.0;
    }
    for n in &mut sc.nodes {
        match n.id.0 {
            2 => n.bandwidth = rng.random_range(1.5e6..3.0e6),
            3 => {
                n.position.y = rng.random_range(30.0..45.0);
                n.bandwidth = rng.random_range(1.0e6..2.0e6);
            }
            _ => {}
        }
    }
    sc.validate().expect("variant is valid");
    sc
}

pub fn with_fault(mut sc: Scenario, at: u64, node: NodeId, action: FaultAction) -> Scenario {
    sc.faults.push(FaultInjection { at, node, action });
    sc
}

pub fn outcomes(trace: &[TraceLine]) -> Vec<HandoverOutcome> {
    events(trace)
        .filter_map(|e| match &e.body {
            EventBody::HandoverOutcome { outcome } => Some(outcome.clone()),
            _ => None,
        })
        .collect()
}

/// Every handover succeeded and no session drop discarded executed work.
pub fn all_handovers_lossless(trace: &[TraceLine]) -> bool {
    outcomes(trace).iter().all(HandoverOutcome::is_lossless)
        && !events(trace).any(
            |e| matches!(e.body, EventBody::SessionDropped { lost_units, .. } if lost_units > 0),
        )
}

pub fn quanta(trace: &[TraceLine]) -> u64 {
    events(trace)
        .filter(|e| matches!(e.body, EventBody::ComputeQuantumDone { .. }))
        .count() as u64
}

pub fn total_work(trace: &[TraceLine]) -> u64 {
    events(trace)
        .filter_map(|e| match &e.body {
            EventBody::IntentSubmitted { intent, .. } => Some(intent.total_work()),
            _ => None,
        })
        .sum()
}

/// Independent statement of the semantic-TTL rule.
pub fn ttl_oracle(ttl: &SemanticTtl, now: u64, ctx: &ContextTag) -> bool {
    let zone = ttl.context_tag.zone == ctx.zone;
    let version = ttl.context_tag.intent_version == ctx.intent_version;
    let rel = if zone && version {
        1.0
    } else if version {
        0.5
    } else {
        0.0
    };
    now >= ttl.created_at
        && now - ttl.created_at <= ttl.time_budget
        && rel >= ttl.relevance_threshold
}
