//! Classic Boids steering: cohesion, alignment, separation and an optional
//! goal attraction.

use serde::{Deserialize, Serialize};

use crate::geometry::{centroid, Vec2};
use crate::world::{Goal, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoidsParams {
    pub cohesion_weight: f64,
    pub alignment_weight: f64,
    pub separation_weight: f64,
    /// Neighbors closer than this repel (m).
    pub separation_distance: f64,
    pub goal_weight: f64,
}

impl Default for BoidsParams {
    fn default() -> Self {
        Self {
            cohesion_weight: 0.6,
            alignment_weight: 0.4,
            separation_weight: 1.2,
            separation_distance: 0.5,
            goal_weight: 0.8,
        }
    }
}

impl BoidsParams {
    pub fn is_valid(&self) -> bool {
        [self.cohesion_weight, self.alignment_weight, self.separation_weight, self.goal_weight]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite())
            && self.separation_distance > 0.0
    }
}

/// Weighted Boids steering for one robot. The goal term uses the observed
/// `Goal::Point`, if any. The result is not speed-limited.
pub fn boids_velocity(obs: &Observation, params: &BoidsParams) -> Vec2 {
    let me = obs.self_state.position;
    let mut v = Vec2::ZERO;
    let positions: Vec<Vec2> = obs.neighbors.iter().map(|n| n.position).collect();
    if let Some(c) = centroid(&positions) {
        v += (c - me) * params.cohesion_weight;
        let mean_velocity = obs.neighbors.iter().map(|n| n.velocity).sum::<Vec2>() / obs.neighbors.len() as f64;
        v += mean_velocity * params.alignment_weight;
        for q in &positions {
            let away = me - *q;
            let d = away.norm();
            if d > 0.0 && d < params.separation_distance {
                v += away / (d * d) * params.separation_weight;
            }
        }
    }
    if let Some(Goal::Point(goal)) = obs.assigned_goal {
        v += (goal - me) * params.goal_weight;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Bounds;
    use crate::model::{RobotKind, RobotState};
    use proptest::prelude::*;

    fn robot(id: u32, p: Vec2, v: Vec2) -> RobotState {
        RobotState {
            id,
            position: p,
            velocity: v,
            radius: 0.1,
            kind: RobotKind::Worker,
        }
    }

    fn obs(me: RobotState, neighbors: Vec<RobotState>, goal: Option<Vec2>) -> Observation {
        Observation {
            tick: 0,
            self_state: me,
            neighbors,
            prey: None,
            obstacles: Vec::new(),
            assigned_goal: goal.map(Goal::Point),
            bounds: Bounds::square(2.5),
        }
    }

    #[test]
    fn lone_robot_without_goal_stays() {
        let o = obs(robot(0, Vec2::new(1.0, 1.0), Vec2::new(0.2, 0.0)), vec![], None);
        assert_eq!(boids_velocity(&o, &BoidsParams::default()), Vec2::ZERO);
    }

    #[test]
    fn close_neighbor_to_the_east_repels_westward() {
        let p = BoidsParams {
            cohesion_weight: 0.0,
            alignment_weight: 0.0,
            ..BoidsParams::default()
        };
        let o = obs(robot(0, Vec2::ZERO, Vec2::ZERO), vec![robot(1, Vec2::new(0.3, 0.0), Vec2::ZERO)], None);
        assert!(boids_velocity(&o, &p).x < 0.0);
        assert!(boids_velocity(&o, &BoidsParams::default()).x < 0.0);
    }

    /// Term-by-term evaluation written out independently.
    fn reference(me: Vec2, others: &[(Vec2, Vec2)], goal: Option<Vec2>, p: &BoidsParams) -> Vec2 {
        let (mut cx, mut cy, mut vx, mut vy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (q, v) in others {
            cx += q.x;
            cy += q.y;
            vx += v.x;
            vy += v.y;
            let (dx, dy) = (me.x - q.x, me.y - q.y);
            let d2 = dx * dx + dy * dy;
            if d2 > 0.0 && d2.sqrt() < p.separation_distance {
                sx += dx / d2;
                sy += dy / d2;
            }
        }
        let n = others.len() as f64;
        let mut out = if others.is_empty() {
            Vec2::ZERO
        } else {
            Vec2::new(
                p.cohesion_weight * (cx / n - me.x) + p.alignment_weight * vx / n + p.separation_weight * sx,
                p.cohesion_weight * (cy / n - me.y) + p.alignment_weight * vy / n + p.separation_weight * sy,
            )
        };
        if let Some(g) = goal {
            out += Vec2::new(p.goal_weight * (g.x - me.x), p.goal_weight * (g.y - me.y));
        }
        out
    }

    fn neighborhood() -> impl Strategy<Value = Vec<(Vec2, Vec2)>> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.5f64..0.5, -0.5f64..0.5), 0..8)
            .prop_map(|v| v.into_iter().map(|(x, y, a, b)| (Vec2::new(x, y), Vec2::new(a, b))).collect())
    }

    proptest! {
        #[test]
        fn matches_reference(others in neighborhood(), goal in proptest::option::of((-2.0f64..2.0, -2.0f64..2.0))) {
            let p = BoidsParams::default();
            let goal = goal.map(|(x, y)| Vec2::new(x, y));
            let me = Vec2::new(0.1, -0.2);
            let nb = others.iter().enumerate().map(|(i, (q, v))| robot(i as u32 + 1, *q, *v)).collect();
            let got = boids_velocity(&obs(robot(0, me, Vec2::ZERO), nb, goal), &p);
            let want = reference(me, &others, goal, &p);
            prop_assert!((got - want).norm() < 1e-9 * (1.0 + want.norm()));
        }

        #[test]
        fn rotation_equivariant(others in neighborhood(), angle in -3.2f64..3.2) {
            let p = BoidsParams::default();
            let me = Vec2::new(0.3, 0.4);
            let goal = Vec2::new(-1.0, 0.5);
            let build = |rot: f64| {
                let nb = others
                    .iter()
                    .enumerate()
                    .map(|(i, (q, v))| robot(i as u32 + 1, q.rotated(rot), v.rotated(rot)))
                    .collect();
                obs(robot(0, me.rotated(rot), Vec2::ZERO), nb, Some(goal.rotated(rot)))
            };
            let base = boids_velocity(&build(0.0), &p);
            let turned = boids_velocity(&build(angle), &p);
            prop_assert!((base.rotated(angle) - turned).norm() < 1e-9 * (1.0 + base.norm()));
        }
    }
}
