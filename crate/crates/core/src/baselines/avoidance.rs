//! Reciprocal velocity-obstacle avoidance.
//!
//! Each neighbor contributes a half-plane of permitted velocities; the
//! velocity closest to the preferred one inside all half-planes and the speed
//! disc is found with an incremental 2D linear program. Other workers take
//! half of the avoidance effort, static obstacles and the prey none.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::model::RobotState;
use crate::world::Observation;

const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvoidanceParams {
    /// How far ahead collisions are predicted (s).
    pub time_horizon: f64,
    /// Neighbors farther than this are ignored (m).
    pub neighbor_radius: f64,
    pub max_speed: f64,
    /// Clearance added to the summed body radii (m).
    #[serde(default)]
    pub safety_margin: f64,
    /// Simulation step, used when bodies already overlap (s).
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    0.1
}

impl Default for AvoidanceParams {
    fn default() -> Self {
        Self {
            time_horizon: 2.0,
            neighbor_radius: 1.0,
            max_speed: 0.5,
            safety_margin: 0.05,
            step: 0.1,
        }
    }
}

impl AvoidanceParams {
    pub fn is_valid(&self) -> bool {
        self.time_horizon > 0.0
            && self.neighbor_radius > 0.0
            && self.max_speed > 0.0
            && self.safety_margin >= 0.0
            && self.step > 0.0
    }
}

/// Result of [`avoid_velocity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Avoided {
    pub velocity: Vec2,
    /// The constraints were infeasible and pure repulsion was used instead.
    pub fallback: bool,
}

/// Boundary of a permitted half-plane: velocities on the left of `direction`
/// through `point` are allowed.
#[derive(Debug, Clone, Copy)]
struct Line {
    point: Vec2,
    direction: Vec2,
}

fn constraint(me: &RobotState, other: &RobotState, share: f64, params: &AvoidanceParams) -> Line {
    let rel_pos = other.position - me.position;
    let rel_vel = me.velocity - other.velocity;
    let dist_sq = rel_pos.norm_squared();
    let radius = me.radius + other.radius + params.safety_margin;
    let radius_sq = radius * radius;
    let inv_tau = 1.0 / params.time_horizon;

    let (direction, u) = if dist_sq > radius_sq {
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_squared();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > radius_sq * w_len_sq {
            // Closest boundary is the truncation arc.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            (Vec2::new(unit_w.y, -unit_w.x), unit_w * (radius * inv_tau - w_len))
        } else {
            let leg = (dist_sq - radius_sq).sqrt();
            // Exactly head-on resolves to the left leg: both agents turn
            // counterclockwise.
            let direction = if rel_pos.cross(w) >= 0.0 {
                Vec2::new(rel_pos.x * leg - rel_pos.y * radius, rel_pos.x * radius + rel_pos.y * leg) / dist_sq
            } else {
                -Vec2::new(rel_pos.x * leg + rel_pos.y * radius, -rel_pos.x * radius + rel_pos.y * leg) / dist_sq
            };
            (direction, direction * rel_vel.dot(direction) - rel_vel)
        }
    } else {
        // Already overlapping: separate within one step.
        let inv_dt = 1.0 / params.step;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > EPSILON { w / w_len } else { Vec2::new(0.0, 1.0) };
        (Vec2::new(unit_w.y, -unit_w.x), unit_w * (radius * inv_dt - w_len))
    };
    Line {
        point: me.velocity + u * share,
        direction,
    }
}

/// Optimizes along line `i` subject to lines `0..i` and the speed disc.
fn solve_on_line(lines: &[Line], i: usize, radius: f64, preferred: Vec2, result: &mut Vec2) -> bool {
    let line = lines[i];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_squared();
    if disc < 0.0 {
        return false;
    }
    let sqrt_disc = disc.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;
    for other in &lines[..i] {
        let denom = line.direction.cross(other.direction);
        let numer = other.direction.cross(line.point - other.point);
        if denom.abs() <= EPSILON {
            if numer < 0.0 {
                return false;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }
    let t = line.direction.dot(preferred - line.point).clamp(t_left, t_right);
    *result = line.point + line.direction * t;
    true
}

/// Returns the index of the first line that could not be satisfied, or
/// `lines.len()` on success.
fn solve(lines: &[Line], radius: f64, preferred: Vec2, result: &mut Vec2) -> usize {
    *result = preferred.clamp_norm(radius);
    for i in 0..lines.len() {
        if lines[i].direction.cross(lines[i].point - *result) > 0.0 {
            let before = *result;
            if !solve_on_line(lines, i, radius, preferred, result) {
                *result = before;
                return i;
            }
        }
    }
    lines.len()
}

/// Velocity closest to `preferred` that avoids every neighbor and obstacle in
/// range for `time_horizon` seconds under constant-velocity prediction.
pub fn avoid_velocity(preferred: Vec2, obs: &Observation, params: &AvoidanceParams) -> Avoided {
    let me = obs.self_state;
    let preferred = preferred.clamp_norm(params.max_speed);
    let in_range = |p: Vec2| p.distance(me.position) <= params.neighbor_radius;

    let mut lines = Vec::new();
    let mut others: Vec<(RobotState, f64)> = obs
        .neighbors
        .iter()
        .filter(|n| in_range(n.position))
        .map(|n| (*n, 0.5))
        .collect();
    if let Some(prey) = obs.prey.filter(|p| in_range(p.position)) {
        others.push((prey, 1.0));
    }
    for o in &obs.obstacles {
        if o.center.distance(me.position) - o.radius <= params.neighbor_radius {
            let body = RobotState {
                id: u32::MAX,
                position: o.center,
                velocity: Vec2::ZERO,
                radius: o.radius,
                kind: crate::model::RobotKind::ObstacleStatic,
            };
            others.push((body, 1.0));
        }
    }
    for (other, share) in &others {
        if other.position != me.position || other.velocity != me.velocity {
            lines.push(constraint(&me, other, *share, params));
        }
    }

    let mut result = Vec2::ZERO;
    if solve(&lines, params.max_speed, preferred, &mut result) == lines.len() {
        return Avoided {
            velocity: result,
            fallback: false,
        };
    }

    let push: Vec2 = others
        .iter()
        .map(|(o, _)| {
            let away = me.position - o.position;
            let d = away.norm();
            if d > EPSILON {
                away / (d * d)
            } else {
                Vec2::ZERO
            }
        })
        .sum();
    Avoided {
        velocity: push.normalized() * params.max_speed,
        fallback: true,
    }
}
