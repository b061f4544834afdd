//! Piecewise-linear user mobility and the disc-intersection geometry used for
//! exit prediction and residence estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Position, SimTime, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Position,
    pub max: Position,
}

impl Bounds {
    pub fn contains(&self, p: &Position) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn is_valid(&self) -> bool {
        self.min.x < self.max.x && self.min.y < self.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub at: SimTime,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MobilityMode {
    Scripted,
    RandomWaypoint {
        seed: u64,
        speed_min: f64,
        speed_max: f64,
        bounds: Bounds,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityPath {
    pub user_id: UserId,
    pub waypoints: Vec<Waypoint>,
    pub mode: MobilityMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MobilityError {
    #[error("time {t} ms precedes the first waypoint at {start} ms")]
    BeforePathStart { t: SimTime, start: SimTime },
    #[error("mobility path has no waypoints")]
    Empty,
}

impl MobilityPath {
    pub fn scripted(user_id: UserId, waypoints: Vec<Waypoint>) -> Self {
        Self {
            user_id,
            waypoints,
            mode: MobilityMode::Scripted,
        }
    }

    pub fn start_time(&self) -> Option<SimTime> {
        self.waypoints.first().map(|w| w.at)
    }

    /// Human-readable invariant violations (strictly increasing times, in bounds).
    pub fn violations(&self, bounds: &Bounds) -> Vec<String> {
        let mut v = Vec::new();
        if self.waypoints.is_empty() {
            v.push("waypoints: at least one waypoint required".to_string());
        }
        for w in self.waypoints.windows(2) {
            if w[1].at <= w[0].at {
                v.push(format!(
                    "waypoints: times must be strictly increasing ({} then {})",
                    w[0].at, w[1].at
                ));
            }
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !bounds.contains(&w.position) {
                v.push(format!("waypoints[{i}]: position outside world bounds"));
            }
        }
        v
    }

    /// Index `k` of the segment `[k, k+1]` containing `t`, or `None` past the end.
    fn segment_at(&self, t: SimTime) -> Option<usize> {
        let k = self.waypoints.partition_point(|w| w.at <= t);
        if k == 0 || k >= self.waypoints.len() {
            None
        } else {
            Some(k - 1)
        }
    }

    /// Velocity in m/s at `t`; zero after the last waypoint.
    pub fn velocity_at(&self, t: SimTime) -> (f64, f64) {
        match self.segment_at(t) {
            Some(k) => {
                let (a, b) = (self.waypoints[k], self.waypoints[k + 1]);
                let dt = (b.at - a.at) as f64 / 1000.0;
                (
                    (b.position.x - a.position.x) / dt,
                    (b.position.y - a.position.y) / dt,
                )
            }
            None => (0.0, 0.0),
        }
    }

    pub fn speed_at(&self, t: SimTime) -> f64 {
        let (vx, vy) = self.velocity_at(t);
        vx.hypot(vy)
    }
}

/// Linear interpolation between the bracketing waypoints; clamps after the end.
pub fn position_at(path: &MobilityPath, t: SimTime) -> Result<Position, MobilityError> {
    let first = path.waypoints.first().ok_or(MobilityError::Empty)?;
    if t < first.at {
        return Err(MobilityError::BeforePathStart { t, start: first.at });
    }
    match path.segment_at(t) {
        Some(k) => {
            let (a, b) = (path.waypoints[k], path.waypoints[k + 1]);
            let s = (t - a.at) as f64 / (b.at - a.at) as f64;
            Ok(Position::new(
                a.position.x + s * (b.position.x - a.position.x),
                a.position.y + s * (b.position.y - a.position.y),
            ))
        }
        None => Ok(path.waypoints.last().expect("non-empty").position),
    }
}

/// Roots of `a s^2 + b s + c = 0` in ascending order, computed stably.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some((r1.min(r2), r1.max(r2)))
}

/// First instant (fractional ms) at or after `now` when the path leaves the
/// closed disc `(center, radius)`, assuming it is inside at `now`.
/// `None` if it never leaves (the path ends inside).
pub fn first_exit_time(
    path: &MobilityPath,
    center: Position,
    radius: f64,
    now: SimTime,
) -> Option<f64> {
    let wps = &path.waypoints;
    for k in 0..wps.len().saturating_sub(1) {
        let (a, b) = (wps[k], wps[k + 1]);
        if b.at <= now {
            continue;
        }
        let span = (b.at - a.at) as f64;
        let s_start = if now > a.at {
            (now - a.at) as f64 / span
        } else {
            0.0
        };
        let dx = b.position.x - a.position.x;
        let dy = b.position.y - a.position.y;
        let fx = a.position.x - center.x;
        let fy = a.position.y - center.y;
        let qa = dx * dx + dy * dy;
        if qa == 0.0 {
            // stationary leg: stays wherever it is
            continue;
        }
        let qb = 2.0 * (fx * dx + fy * dy);
        let qc = fx * fx + fy * fy - radius * radius;
        match quadratic_roots(qa, qb, qc) {
            None => return Some(a.at as f64 + s_start * span),
            Some((_, s2)) => {
                if s2 < 1.0 {
                    let s = s2.max(s_start);
                    return Some(a.at as f64 + s * span);
                }
            }
        }
    }
    None
}

/// Seconds a user at `pos` moving with constant `velocity` (m/s) will spend
/// inside the disc from now on. Infinite for a stationary user inside.
pub fn residence_time(pos: Position, velocity: (f64, f64), center: Position, radius: f64) -> f64 {
    let (vx, vy) = velocity;
    let fx = pos.x - center.x;
    let fy = pos.y - center.y;
    let qc = fx * fx + fy * fy - radius * radius;
    let qa = vx * vx + vy * vy;
    if qa == 0.0 {
        return if qc <= 0.0 { f64::INFINITY } else { 0.0 };
    }
    let qb = 2.0 * (fx * vx + fy * vy);
    match quadratic_roots(qa, qb, qc) {
        None => 0.0,
        Some((t1, t2)) if t2 > 0.0 => t2 - t1.max(0.0),
        Some(_) => 0.0,
    }
}

/// Random-waypoint path: uniform destinations in `bounds`, uniform speed in
/// `[speed_min, speed_max]`, optional pause at each destination. Generated
/// until `until` is covered.
#[allow(clippy::too_many_arguments)]
pub fn random_waypoint<R: Rng>(
    user_id: UserId,
    seed: u64,
    rng: &mut R,
    speed: (f64, f64),
    bounds: Bounds,
    start_at: SimTime,
    until: SimTime,
    pause_ms: u64,
) -> MobilityPath {
    let sample = |rng: &mut R| {
        Position::new(
            rng.random_range(bounds.min.x..=bounds.max.x),
            rng.random_range(bounds.min.y..=bounds.max.y),
        )
    };
    let mut t = start_at;
    let mut here = sample(rng);
    let mut waypoints = vec![Waypoint {
        at: t,
        position: here,
    }];
    while t < until {
        let next = sample(rng);
        let v = if speed.1 > speed.0 {
            rng.random_range(speed.0..=speed.1)
        } else {
            speed.0
        };
        let dur = ((here.distance(&next) / v) * 1000.0).ceil().max(1.0) as u64;
        t += dur;
        waypoints.push(Waypoint {
            at: t,
            position: next,
        });
        if pause_ms > 0 {
            t += pause_ms;
            waypoints.push(Waypoint {
                at: t,
                position: next,
            });
        }
        here = next;
    }
    MobilityPath {
        user_id,
        waypoints,
        mode: MobilityMode::RandomWaypoint {
            seed,
            speed_min: speed.0,
            speed_max: speed.1,
            bounds,
        },
    }
}
