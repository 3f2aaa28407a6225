//! Builtin per-task controllers: a central assignment step where the task
//! needs one, then goal tracking through reciprocal avoidance, or Boids for
//! the flocking-style tasks.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::assignment::hungarian;
use crate::geometry::{centroid, Vec2};
use crate::metrics::{crossing_targets, quadrant};
use crate::model::{TaskKind, TaskSpec};
use crate::trial::{Assignments, Controller, PolicyError};
use crate::world::{Goal, Observation, WorldState};

use super::avoidance::{avoid_velocity, AvoidanceParams};
use super::boids::boids_velocity;
use super::BaselineParams;

/// Matches rows to columns of a rectangular cost matrix; rows left without a
/// column get `None`.
pub fn assign_rect(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i < rows && j < cols { cost[i][j] } else { 0.0 }).collect())
        .collect();
    let a = hungarian(&square).expect("padded matrix is square and finite");
    a.permutation[..rows].iter().map(|&j| (j < cols).then_some(j)).collect()
}

fn squared_costs(from: &[Vec2], to: &[Vec2]) -> Vec<Vec<f64>> {
    from.iter().map(|p| to.iter().map(|q| p.distance_squared(*q)).collect()).collect()
}

/// Slot angles `2*pi*k/n` assigned to robots by minimum total squared travel.
pub fn allocate_angles(positions: &[Vec2], center: Vec2, radius: f64) -> Vec<f64> {
    let n = positions.len();
    let angles: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
    let slots: Vec<Vec2> = angles.iter().map(|a| center + Vec2::from_polar(radius, *a)).collect();
    let a = hungarian(&squared_costs(positions, &slots)).expect("finite costs");
    a.permutation.iter().map(|&k| angles[k]).collect()
}

/// Centers of a near-square grid of `n` equal cells over `bounds`.
pub fn coverage_cells(bounds: &crate::geometry::Bounds, n: usize) -> Vec<Vec2> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    let (w, h) = (bounds.width() / cols as f64, bounds.height() / rows as f64);
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| Vec2::new(bounds.min.x + w * (c as f64 + 0.5), bounds.min.y + h * (r as f64 + 0.5)))
        .collect()
}

/// Splits landmarks into per-robot visiting orders by repeated assignment,
/// each round continuing from the previous round's landmark.
pub fn plan_routes(starts: &[Vec2], landmarks: &[Vec2]) -> Vec<Vec<Vec2>> {
    let mut routes: Vec<Vec<Vec2>> = vec![Vec::new(); starts.len()];
    let mut heads = starts.to_vec();
    let mut remaining = landmarks.to_vec();
    while !remaining.is_empty() && !starts.is_empty() {
        let picks = assign_rect(&squared_costs(&heads, &remaining));
        let mut taken: Vec<usize> = Vec::new();
        for (i, pick) in picks.iter().enumerate() {
            if let Some(j) = *pick {
                routes[i].push(remaining[j]);
                heads[i] = remaining[j];
                taken.push(j);
            }
        }
        taken.sort_unstable_by(|a, b| b.cmp(a));
        for j in taken {
            remaining.remove(j);
        }
    }
    routes
}

/// A closed circular route entered at `start`, traversed counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopRoute {
    pub start: Vec2,
    pub center: Vec2,
    pub radius: f64,
}

impl LoopRoute {
    /// Loop through `start` bending toward the arena center.
    pub fn through(start: Vec2, arena_center: Vec2, radius: f64) -> Self {
        let inward = (arena_center - start).normalized();
        let inward = if inward == Vec2::ZERO { Vec2::new(1.0, 0.0) } else { inward };
        Self {
            start,
            center: start + inward * radius,
            radius,
        }
    }

    fn start_angle(&self) -> f64 {
        (self.start - self.center).angle()
    }

    pub fn tangent_at_start(&self) -> Vec2 {
        Vec2::from_polar(1.0, self.start_angle()).perp()
    }

    /// Point at arc length `s` from the start; negative `s` lies on the
    /// tangent line behind the start.
    pub fn point(&self, s: f64) -> Vec2 {
        if s < 0.0 {
            return self.start + self.tangent_at_start() * s;
        }
        self.center + Vec2::from_polar(self.radius, self.start_angle() + s / self.radius)
    }

    pub fn tangent(&self, s: f64) -> Vec2 {
        if s < 0.0 {
            return self.tangent_at_start();
        }
        Vec2::from_polar(1.0, self.start_angle() + s / self.radius).perp()
    }
}

#[derive(Debug, Clone)]
struct FlockPlan {
    route: LoopRoute,
    rank: BTreeMap<u32, usize>,
    dt: f64,
}

/// Builtin controller for one task kind.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    kind: TaskKind,
    params: BaselineParams,
    overrides: BTreeMap<String, f64>,
    task_params: BTreeMap<String, f64>,
    v_max: f64,
    route_progress: BTreeMap<u32, usize>,
    flock: Option<FlockPlan>,
}

impl ExpertPolicy {
    pub fn new(kind: TaskKind, params: BaselineParams) -> Self {
        Self {
            kind,
            params,
            overrides: BTreeMap::new(),
            task_params: BTreeMap::new(),
            v_max: params.avoidance.max_speed,
            route_progress: BTreeMap::new(),
            flock: None,
        }
    }

    /// Replaces task parameters (for example `r_desired`) with the given values.
    pub fn with_overrides(mut self, overrides: BTreeMap<String, f64>) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    fn param(&self, name: &str, default: f64) -> f64 {
        self.task_params.get(name).copied().unwrap_or(default)
    }

    fn avoidance(&self) -> AvoidanceParams {
        AvoidanceParams {
            max_speed: self.v_max,
            ..self.params.avoidance
        }
    }

    fn seek(&self, obs: &Observation, target: Vec2, feedforward: Vec2) -> Vec2 {
        let me = obs.self_state.position;
        let preferred = (feedforward + (target - me) * self.params.tracking.gain).clamp_norm(self.v_max);
        avoid_velocity(preferred, obs, &self.avoidance()).velocity
    }

    fn flock_velocity(&self, obs: &Observation) -> Vec2 {
        let Some(plan) = &self.flock else {
            return boids_velocity(obs, &self.params.boids);
        };
        let t = &self.params.tracking;
        let rank = plan.rank.get(&obs.self_state.id).copied().unwrap_or(0);
        let s = t.flock_speed * obs.tick as f64 * plan.dt - rank as f64 * t.flock_spacing;
        let mut local = obs.clone();
        local.assigned_goal = Some(Goal::Point(plan.route.point(s)));
        let feedforward = if s >= 0.0 { plan.route.tangent(s) * t.flock_speed } else { Vec2::ZERO };
        boids_velocity(&local, &self.params.boids) + feedforward
    }

    fn pursue_velocity(&self, obs: &Observation) -> Vec2 {
        let mut local = obs.clone();
        if let Some(leader) = obs.prey {
            local.neighbors.push(leader);
            local.assigned_goal = Some(Goal::Point(leader.position));
        }
        let me = obs.self_state;
        let clearance = self.params.tracking.obstacle_clearance;
        let mut v = boids_velocity(&local, &self.params.boids);
        for o in &obs.obstacles {
            let away = me.position - o.center;
            let gap = away.norm() - o.radius - me.radius;
            if gap < clearance {
                v += away.normalized() * (self.v_max * 2.0 * (clearance - gap) / clearance);
            }
        }
        v
    }
}

impl Controller for ExpertPolicy {
    fn name(&self) -> String {
        "expert".into()
    }

    fn global_step(&mut self, world: &WorldState, spec: &TaskSpec) -> Result<Option<Assignments>, PolicyError> {
        let mut task_params = spec.params.clone();
        task_params.extend(self.overrides.iter().map(|(k, v)| (k.clone(), *v)));
        self.task_params = task_params;
        self.v_max = spec.robot.v_max.min(self.params.avoidance.max_speed);
        if let Some(cap) = self.task_params.get("speed_limit") {
            self.v_max = self.v_max.min(cap.max(0.0));
        }
        self.route_progress.clear();
        self.flock = None;

        let ids = world.worker_ids();
        let positions = world.worker_positions();
        let points = |targets: Vec<Vec2>| -> Assignments {
            ids.iter().zip(targets).map(|(id, p)| (*id, Goal::Point(p))).collect()
        };
        let matched = |targets: &[Vec2]| -> Assignments {
            let picks = assign_rect(&squared_costs(&positions, targets));
            ids.iter()
                .zip(picks)
                .filter_map(|(id, j)| j.map(|j| (*id, Goal::Point(targets[j]))))
                .collect()
        };

        let goals = match self.kind {
            TaskKind::Aggregation => {
                let c = centroid(&positions).unwrap_or(world.bounds.center());
                points(vec![c; ids.len()])
            }
            TaskKind::Flocking => {
                let c = centroid(&positions).unwrap_or(world.bounds.center());
                let route = LoopRoute::through(c, world.bounds.center(), self.params.tracking.flock_loop_radius);
                let tangent = route.tangent_at_start();
                let mut order: Vec<(u32, f64)> = ids
                    .iter()
                    .zip(&positions)
                    .map(|(id, p)| (*id, (*p - c).dot(tangent)))
                    .collect();
                order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let rank = order.iter().enumerate().map(|(r, (id, _))| (*id, r)).collect();
                self.flock = Some(FlockPlan {
                    route,
                    rank,
                    dt: world.dt,
                });
                Assignments::new()
            }
            TaskKind::Shaping | TaskKind::Bridging => {
                let targets = spec.layout.shape.map(|s| s.points(ids.len())).unwrap_or_default();
                matched(&targets)
            }
            TaskKind::Encircling => {
                let prey = world.target().map_or(world.bounds.center(), |t| t.position);
                let r = self.param("r_desired", 1.0);
                allocate_angles(&positions, prey, r)
                    .into_iter()
                    .zip(&ids)
                    .map(|(a, id)| (*id, Goal::Angle(a)))
                    .collect()
            }
            TaskKind::Crossing => points(crossing_targets(&positions)),
            TaskKind::Coverage => {
                let area = spec.layout.bounds;
                matched(&coverage_cells(&area, ids.len()))
            }
            TaskKind::Exploration => ids
                .iter()
                .zip(plan_routes(&positions, &spec.layout.landmarks))
                .map(|(id, route)| (*id, Goal::Route(route)))
                .collect(),
            TaskKind::Pursuing => Assignments::new(),
            TaskKind::Clustering => {
                let mut goals = Assignments::new();
                let ring = self.params.tracking.cluster_ring;
                for q in 0..4 {
                    let members: Vec<usize> = (0..ids.len()).filter(|&i| quadrant(positions[i]) == q).collect();
                    let Some(region) = spec.layout.regions.get(q) else { continue };
                    let m = members.len();
                    let spots: Vec<Vec2> = if m == 1 {
                        vec![region.center]
                    } else {
                        (0..m)
                            .map(|k| region.center + Vec2::from_polar(ring.min(region.radius), TAU * k as f64 / m as f64))
                            .collect()
                    };
                    let from: Vec<Vec2> = members.iter().map(|&i| positions[i]).collect();
                    for (k, pick) in assign_rect(&squared_costs(&from, &spots)).into_iter().enumerate() {
                        if let Some(j) = pick {
                            goals.insert(ids[members[k]], Goal::Point(spots[j]));
                        }
                    }
                }
                goals
            }
        };
        Ok(Some(goals))
    }

    fn act(&mut self, observations: &[Observation]) -> Result<BTreeMap<u32, Vec2>, PolicyError> {
        let mut out = BTreeMap::new();
        for obs in observations {
            let me = obs.self_state.position;
            let v = match self.kind {
                TaskKind::Aggregation => boids_velocity(obs, &self.params.boids),
                TaskKind::Flocking => self.flock_velocity(obs),
                TaskKind::Pursuing => self.pursue_velocity(obs),
                TaskKind::Encircling => match (&obs.assigned_goal, obs.prey) {
                    (Some(Goal::Angle(a)), Some(prey)) => {
                        let r = self.param("r_desired", 1.0);
                        self.seek(obs, prey.position + Vec2::from_polar(r, *a), prey.velocity)
                    }
                    _ => Vec2::ZERO,
                },
                TaskKind::Exploration => match &obs.assigned_goal {
                    Some(Goal::Route(route)) if !route.is_empty() => {
                        let id = obs.self_state.id;
                        let tol = self.params.tracking.arrive_tolerance;
                        let mut k = self.route_progress.get(&id).copied().unwrap_or(0);
                        while k + 1 < route.len() && me.distance(route[k]) <= tol {
                            k += 1;
                        }
                        self.route_progress.insert(id, k);
                        self.seek(obs, route[k], Vec2::ZERO)
                    }
                    _ => Vec2::ZERO,
                },
                _ => match obs.assigned_goal {
                    Some(Goal::Point(goal)) => self.seek(obs, goal, Vec2::ZERO),
                    _ => Vec2::ZERO,
                },
            };
            let v = match self.task_params.contains_key("speed_limit") {
                true => v.clamp_norm(self.v_max),
                false => v,
            };
            out.insert(obs.self_state.id, v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::assignment_cost;
    use crate::geometry::Bounds;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn shaping_assignment_is_optimal_against_all_permutations() {
        let spec = TaskSpec::default_for(TaskKind::Shaping);
        let world = crate::world::init_world(&spec, 3).unwrap();
        let positions = world.worker_positions();
        let targets = spec.shape_targets().unwrap();
        let cost = squared_costs(&positions, &targets);
        let best = permutations(8)
            .iter()
            .map(|p| assignment_cost(&cost, p))
            .fold(f64::INFINITY, f64::min);
        let mut policy = ExpertPolicy::new(TaskKind::Shaping, BaselineParams::default());
        let goals = policy.global_step(&world, &spec).unwrap().unwrap();
        let chosen: f64 = world
            .workers()
            .map(|r| match goals[&r.id] {
                Goal::Point(g) => r.position.distance_squared(g),
                _ => unreachable!(),
            })
            .sum();
        assert!((chosen - best).abs() < 1e-9);
    }

    #[test]
    fn encircling_slots_are_even() {
        let spec = TaskSpec::default_for(TaskKind::Encircling);
        let world = crate::world::init_world(&spec, 7).unwrap();
        let mut policy = ExpertPolicy::new(TaskKind::Encircling, BaselineParams::default());
        let goals = policy.global_step(&world, &spec).unwrap().unwrap();
        let mut angles: Vec<f64> = goals
            .values()
            .map(|g| match g {
                Goal::Angle(a) => *a,
                _ => unreachable!(),
            })
            .collect();
        angles.sort_by(f64::total_cmp);
        let want: Vec<f64> = (0..6).map(|k| TAU * k as f64 / 6.0).collect();
        assert_eq!(angles, want);
    }

    #[test]
    fn speed_limit_override_caps_commands() {
        let spec = TaskSpec::default_for(TaskKind::Aggregation);
        let slow = BTreeMap::from([("speed_limit".to_string(), 0.1)]);
        let mut policy = ExpertPolicy::new(TaskKind::Aggregation, BaselineParams::default()).with_overrides(slow);
        let log = crate::run_trial(&mut policy, &spec, 3).unwrap();
        assert!(log.max_step_per_tick() <= 0.1 * spec.trial.dt + 1e-12);

        let stop = BTreeMap::from([("speed_limit".to_string(), 0.0)]);
        let mut policy = ExpertPolicy::new(TaskKind::Aggregation, BaselineParams::default()).with_overrides(stop);
        let log = crate::run_trial(&mut policy, &spec, 3).unwrap();
        assert_eq!(log.initial_positions(), log.final_positions());
    }

    #[test]
    fn rectangular_assignment_pads() {
        let cost = vec![vec![5.0, 1.0, 9.0]];
        assert_eq!(assign_rect(&cost), vec![Some(1)]);
        let tall = vec![vec![1.0], vec![0.0]];
        assert_eq!(assign_rect(&tall), vec![None, Some(0)]);
    }

    #[test]
    fn routes_cover_every_landmark_once() {
        let starts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)];
        let landmarks: Vec<Vec2> = (0..5).map(|k| Vec2::new(k as f64, 0.0)).collect();
        let routes = plan_routes(&starts, &landmarks);
        let mut all: Vec<Vec2> = routes.concat();
        all.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(all, landmarks);
    }

    #[test]
    fn coverage_cells_tile_the_arena() {
        let cells = coverage_cells(&Bounds::square(2.5), 9);
        assert_eq!(cells.len(), 9);
        assert!(cells.contains(&Vec2::new(0.0, 0.0)));
        assert!(cells.iter().all(|c| c.x.abs() <= 5.0 / 3.0 + 1e-12 && c.y.abs() <= 5.0 / 3.0 + 1e-12));
    }

    #[test]
    fn loop_route_stays_in_arena() {
        let arena = Bounds::square(2.5);
        for &(x, y) in &[(1.35, 1.35), (-1.35, 0.2), (0.0, 0.0), (0.3, -1.35)] {
            let route = LoopRoute::through(Vec2::new(x, y), arena.center(), 1.2);
            for k in 0..100 {
                assert!(arena.contains(route.point(k as f64 * 0.1)));
            }
            assert!((route.point(0.0) - Vec2::new(x, y)).norm() < 1e-12);
        }
    }
}
