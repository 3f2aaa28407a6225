//! Task metrics, threshold checks and the per-task success verdict.
//!
//! Instantaneous metrics are evaluated on the final recorded positions.
//! Variances are population variances.

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::geometry::{centroid, Bounds, Vec2};
use crate::model::{MetricEntry, MetricName, MetricReport, Region, TaskKind, TaskSpec, Threshold, Trajectory};
use crate::trial::TrialLog;
use crate::world::WorldState;

/// Fraction of the final ticks over which encircling error is averaged.
pub const ENCIRCLE_WINDOW: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric needs at least two robots, got {0}")]
    FewerThanTwo(usize),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("{positions} positions but {targets} targets")]
    CountMismatch { positions: usize, targets: usize },
    #[error("missing metric input: {0}")]
    MissingInput(String),
}

/// Index pairs aligning two sequences, starting at (0, 0) and ending at the
/// last index of each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpingPath(pub Vec<(usize, usize)>);

impl WarpingPath {
    /// Boundary, continuity and monotonicity for sequences of the given lengths.
    pub fn is_valid(&self, len_a: usize, len_b: usize) -> bool {
        let p = &self.0;
        if p.first() != Some(&(0, 0)) || p.last() != Some(&(len_a.wrapping_sub(1), len_b.wrapping_sub(1))) {
            return false;
        }
        p.windows(2).all(|w| {
            let (da, db) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            da <= 1 && db <= 1 && da + db >= 1
        })
    }

    pub fn cost(&self, a: &[Vec2], b: &[Vec2]) -> f64 {
        self.0.iter().map(|&(i, j)| a[i].distance(b[j])).sum()
    }
}

fn nearest_neighbor_distances(positions: &[Vec2]) -> Vec<f64> {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.distance(*q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Largest nearest-neighbor distance.
pub fn d_maxmin(positions: &[Vec2]) -> Result<f64, MetricError> {
    if positions.len() < 2 {
        return Err(MetricError::FewerThanTwo(positions.len()));
    }
    Ok(nearest_neighbor_distances(positions).into_iter().fold(0.0, f64::max))
}

/// Sum of the per-axis population variances.
pub fn var_spat(positions: &[Vec2]) -> f64 {
    population_variance(positions.iter().map(|p| p.x)) + population_variance(positions.iter().map(|p| p.y))
}

fn dtw_table(a: &[Vec2], b: &[Vec2]) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let cost = a[i].distance(b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(d[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(d[i][j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(d[i - 1][j - 1]);
                }
                best
            };
            d[i][j] = cost + prev;
        }
    }
    d
}

/// Dynamic time warping distance: the smallest summed point distance over
/// all warping paths.
pub fn dtw(a: &[Vec2], b: &[Vec2]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyTrajectory);
    }
    Ok(dtw_table(a, b)[a.len() - 1][b.len() - 1])
}

/// [`dtw`] together with one optimal path.
pub fn dtw_with_path(a: &[Vec2], b: &[Vec2]) -> Result<(f64, WarpingPath), MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyTrajectory);
    }
    let d = dtw_table(a, b);
    let (mut i, mut j) = (a.len() - 1, b.len() - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        let mut candidates = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            candidates.push((i - 1, j - 1));
        }
        if i > 0 {
            candidates.push((i - 1, j));
        }
        if j > 0 {
            candidates.push((i, j - 1));
        }
        (i, j) = candidates
            .into_iter()
            .min_by(|x, y| d[x.0][x.1].total_cmp(&d[y.0][y.1]))
            .expect("at least one predecessor");
        path.push((i, j));
    }
    path.reverse();
    Ok((d[a.len() - 1][b.len() - 1], WarpingPath(path)))
}

/// Mean DTW distance over all unordered pairs.
pub fn mean_pairwise_dtw(trajectories: &[Vec<Vec2>]) -> Result<f64, MetricError> {
    let n = trajectories.len();
    if n < 2 {
        return Err(MetricError::FewerThanTwo(n));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += dtw(&trajectories[i], &trajectories[j])?;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Mean squared distance to the targets under the best robot-to-target
/// matching. No rotation or scaling is optimized.
pub fn shape_distance(positions: &[Vec2], targets: &[Vec2]) -> Result<f64, MetricError> {
    if positions.len() != targets.len() {
        return Err(MetricError::CountMismatch {
            positions: positions.len(),
            targets: targets.len(),
        });
    }
    if positions.is_empty() {
        return Err(MetricError::MissingInput("no positions".into()));
    }
    let cost: Vec<Vec<f64>> = positions
        .iter()
        .map(|p| targets.iter().map(|t| p.distance_squared(*t)).collect())
        .collect();
    let a = hungarian(&cost).expect("squared distances of finite points are finite");
    Ok(a.cost / positions.len() as f64)
}

/// Mean absolute deviation of robot-to-prey distance from `r_desired`.
pub fn encircle_error(positions: &[Vec2], prey: Vec2, r_desired: f64) -> Result<f64, MetricError> {
    if positions.is_empty() {
        return Err(MetricError::MissingInput("no positions".into()));
    }
    let total: f64 = positions.iter().map(|p| (p.distance(prey) - r_desired).abs()).sum();
    Ok(total / positions.len() as f64)
}

/// Share of robots within `tolerance` of their own target.
pub fn reach_ratio(positions: &[Vec2], targets: &[Vec2], tolerance: f64) -> Result<f64, MetricError> {
    if positions.len() != targets.len() {
        return Err(MetricError::CountMismatch {
            positions: positions.len(),
            targets: targets.len(),
        });
    }
    if positions.is_empty() {
        return Err(MetricError::MissingInput("no positions".into()));
    }
    let reached = positions.iter().zip(targets).filter(|(p, t)| p.distance(**t) <= tolerance).count();
    Ok(reached as f64 / positions.len() as f64)
}

/// Area of the robots' bounding box relative to `total`.
pub fn area_ratio(positions: &[Vec2], total: &Bounds) -> Result<f64, MetricError> {
    if positions.is_empty() {
        return Err(MetricError::MissingInput("no positions".into()));
    }
    let (mut lo, mut hi) = (positions[0], positions[0]);
    for p in positions {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    Ok((hi.x - lo.x) * (hi.y - lo.y) / total.area())
}

/// Population variance of nearest-neighbor distances.
pub fn var_nnd(positions: &[Vec2]) -> Result<f64, MetricError> {
    if positions.len() < 2 {
        return Err(MetricError::FewerThanTwo(positions.len()));
    }
    Ok(population_variance(nearest_neighbor_distances(positions).into_iter()))
}

/// Share of landmarks that some trajectory sample came within `tolerance` of.
pub fn visit_ratio(trajectories: &[Vec<Vec2>], landmarks: &[Vec2], tolerance: f64) -> Result<f64, MetricError> {
    if landmarks.is_empty() {
        return Err(MetricError::MissingInput("no landmarks".into()));
    }
    let visited = landmarks
        .iter()
        .filter(|l| trajectories.iter().flatten().any(|p| p.distance(**l) <= tolerance))
        .count();
    Ok(visited as f64 / landmarks.len() as f64)
}

/// Distance from the swarm centroid to the prey or leader.
pub fn avg_prey_distance(positions: &[Vec2], prey: Vec2) -> Result<f64, MetricError> {
    centroid(positions)
        .map(|c| c.distance(prey))
        .ok_or_else(|| MetricError::MissingInput("no positions".into()))
}

/// Quadrant index 0..4 (first to fourth). Points on an axis belong to the
/// strictly positive side; the origin belongs to the first quadrant.
pub fn quadrant(p: Vec2) -> usize {
    match (p.x >= 0.0, p.y >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

/// Share of robots that end within `tolerance` of the region belonging to
/// the quadrant they started in.
pub fn achieve_ratio(
    initial: &[Vec2],
    finals: &[Vec2],
    regions: &[Region],
    tolerance: f64,
) -> Result<f64, MetricError> {
    if initial.len() != finals.len() {
        return Err(MetricError::CountMismatch {
            positions: finals.len(),
            targets: initial.len(),
        });
    }
    if regions.len() != 4 {
        return Err(MetricError::MissingInput(format!("need 4 quadrant regions, got {}", regions.len())));
    }
    if initial.is_empty() {
        return Err(MetricError::MissingInput("no positions".into()));
    }
    let achieved = initial
        .iter()
        .zip(finals)
        .filter(|(p0, p)| {
            let r = &regions[quadrant(**p0)];
            p.distance(r.center) <= r.radius + tolerance
        })
        .count();
    Ok(achieved as f64 / initial.len() as f64)
}

/// Crossing goals: each robot heads for the start of the robot farthest from
/// it (lowest id on ties).
pub fn crossing_targets(initial: &[Vec2]) -> Vec<Vec2> {
    initial
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = (i, f64::NEG_INFINITY);
            for (j, q) in initial.iter().enumerate() {
                let d = p.distance(*q);
                if j != i && d > best.1 {
                    best = (j, d);
                }
            }
            initial[best.0]
        })
        .collect()
}

/// The denominator of the coverage area ratio.
pub fn coverage_area(spec: &TaskSpec) -> Bounds {
    spec.layout.eval_region.unwrap_or(spec.layout.bounds)
}

fn param(spec: &TaskSpec, name: &str) -> Result<f64, MetricError> {
    spec.param(name).ok_or_else(|| MetricError::MissingInput(format!("parameter {name}")))
}

fn entry(spec: &TaskSpec, name: MetricName, value: f64, samples: usize) -> Result<MetricEntry, MetricError> {
    let t: &Threshold = spec
        .thresholds
        .get(name.as_str())
        .ok_or_else(|| MetricError::MissingInput(format!("threshold {name}")))?;
    let threshold = if t.per_sample { t.value * samples as f64 } else { t.value };
    Ok(MetricEntry {
        name: name.as_str().to_string(),
        value,
        threshold,
        comparator: t.comparator,
        pass: t.comparator.holds(value, threshold),
    })
}

/// Scores a trial log against the spec's metrics and thresholds.
///
/// A trial that ended in a policy failure is never a success.
pub fn evaluate(log: &TrialLog, spec: &TaskSpec) -> Result<MetricReport, MetricError> {
    let finals = log.final_positions();
    if finals.is_empty() {
        return Err(MetricError::MissingInput("log has no samples".into()));
    }
    let mut entries = Vec::new();
    for &name in spec.kind.required_metrics() {
        let (value, samples) = match name {
            MetricName::DMaxmin => (d_maxmin(&finals)?, 1),
            MetricName::VarSpat => (var_spat(&finals), 1),
            MetricName::DDtw => {
                let trajs: Vec<Vec<Vec2>> = log.worker_trajectories().iter().map(Trajectory::points).collect();
                let samples = trajs.iter().map(Vec::len).max().unwrap_or(0);
                (mean_pairwise_dtw(&trajs)?, samples)
            }
            MetricName::DProc => {
                let targets = spec
                    .shape_targets()
                    .ok_or_else(|| MetricError::MissingInput("shape".into()))?;
                (shape_distance(&finals, &targets)?, 1)
            }
            MetricName::DError => {
                let r = param(spec, "r_desired")?;
                let ticks = log.sample_ticks();
                let window = ((ticks.len() as f64 * ENCIRCLE_WINDOW).ceil() as usize).clamp(1, ticks.len());
                let mut total = 0.0;
                for &t in &ticks[ticks.len() - window..] {
                    let prey = log
                        .target_at(t)
                        .ok_or_else(|| MetricError::MissingInput("prey trajectory".into()))?;
                    total += encircle_error(&log.positions_at(t), prey, r)?;
                }
                (total / window as f64, 1)
            }
            MetricName::RhoReach => {
                let targets = crossing_targets(&log.initial_positions());
                (reach_ratio(&finals, &targets, param(spec, "reach_tolerance")?)?, 1)
            }
            MetricName::RhoArea => (area_ratio(&finals, &coverage_area(spec))?, 1),
            MetricName::VarNnd => (var_nnd(&finals)?, 1),
            MetricName::RhoVisit => {
                let trajs: Vec<Vec<Vec2>> = log.worker_trajectories().iter().map(Trajectory::points).collect();
                (
                    visit_ratio(&trajs, &spec.layout.landmarks, param(spec, "visit_tolerance")?)?,
                    1,
                )
            }
            MetricName::DAvgPrey => {
                let last = *log.sample_ticks().last().expect("non-empty log");
                let leader = log
                    .target_at(last)
                    .ok_or_else(|| MetricError::MissingInput("leader trajectory".into()))?;
                (avg_prey_distance(&finals, leader)?, 1)
            }
            MetricName::RAchieve => (
                achieve_ratio(
                    &log.initial_positions(),
                    &finals,
                    &spec.layout.regions,
                    param(spec, "achieve_tolerance")?,
                )?,
                1,
            ),
        };
        entries.push(entry(spec, name, value, samples)?);
    }
    let mut report = MetricReport::new(spec.kind, log.seed, entries);
    report.success &= !log.outcome.is_policy_failure();
    Ok(report)
}

/// Tracks the instantaneous success predicate during a trial.
///
/// Only tasks with fixed goals finish early; flocking is judged on whole
/// trajectories and the moving-target tasks on sustained tracking.
#[derive(Debug, Clone)]
pub struct SuccessTracker {
    spec: TaskSpec,
    initial: Vec<Vec2>,
    crossing: Vec<Vec2>,
    visited: Vec<bool>,
}

impl SuccessTracker {
    pub fn new(spec: &TaskSpec, world: &WorldState) -> Self {
        let initial = world.worker_positions();
        let mut tracker = Self {
            spec: spec.clone(),
            crossing: crossing_targets(&initial),
            initial,
            visited: vec![false; spec.layout.landmarks.len()],
        };
        tracker.mark_visits(world);
        tracker
    }

    pub fn enabled(&self) -> bool {
        !matches!(
            self.spec.kind,
            TaskKind::Flocking | TaskKind::Encircling | TaskKind::Pursuing
        )
    }

    fn mark_visits(&mut self, world: &WorldState) {
        let tol = self.spec.param_or("visit_tolerance", 0.1);
        for (seen, l) in self.visited.iter_mut().zip(&self.spec.layout.landmarks) {
            *seen |= world.workers().any(|r| r.position.distance(*l) <= tol);
        }
    }

    /// Updates cumulative state and reports whether every metric passes now.
    pub fn observe(&mut self, world: &WorldState) -> bool {
        self.mark_visits(world);
        let p = world.worker_positions();
        let spec = &self.spec;
        let pass = |name: MetricName, value: Result<f64, MetricError>| match (value, spec.thresholds.get(name.as_str())) {
            (Ok(v), Some(t)) => t.comparator.holds(v, t.value),
            _ => false,
        };
        match spec.kind {
            TaskKind::Aggregation => pass(MetricName::DMaxmin, d_maxmin(&p)),
            TaskKind::Shaping | TaskKind::Bridging => match spec.shape_targets() {
                Some(t) => pass(MetricName::DProc, shape_distance(&p, &t)),
                None => false,
            },
            TaskKind::Crossing => pass(
                MetricName::RhoReach,
                reach_ratio(&p, &self.crossing, spec.param_or("reach_tolerance", 0.1)),
            ),
            TaskKind::Coverage => {
                pass(MetricName::RhoArea, area_ratio(&p, &coverage_area(spec)))
                    && pass(MetricName::VarNnd, var_nnd(&p))
            }
            TaskKind::Exploration => self.visited.iter().all(|v| *v),
            TaskKind::Clustering => pass(
                MetricName::RAchieve,
                achieve_ratio(&self.initial, &p, &spec.layout.regions, spec.param_or("achieve_tolerance", 0.1)),
            ),
            TaskKind::Flocking | TaskKind::Encircling | TaskKind::Pursuing => false,
        }
    }
}
