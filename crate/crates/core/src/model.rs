//! Task descriptions, robot parameters and the task-file format.
//!
//! A [`TaskSpec`] is everything needed to reproduce a trial: the task kind,
//! the instruction text handed to the generator, numeric parameters, metric
//! thresholds, the arena layout and the trial configuration. Task files are
//! TOML documents; `tasks/` ships one per task kind.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{Bounds, Vec2};

/// Role of a body in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RobotKind {
    Worker,
    Prey,
    Leader,
    ObstacleStatic,
}

impl RobotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RobotKind::Worker => "worker",
            RobotKind::Prey => "prey",
            RobotKind::Leader => "leader",
            RobotKind::ObstacleStatic => "obstacle-static",
        }
    }

    /// Prey and leader robots both move on their own random walk.
    pub fn is_target(self) -> bool {
        matches!(self, RobotKind::Prey | RobotKind::Leader)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub kind: RobotKind,
}

/// Physical limits enforced by the sensing and motion interfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    /// Speed limit applied to every velocity command (m/s).
    pub v_max: f64,
    /// Perception radius (m).
    pub sense_radius: f64,
    /// Body radius (m).
    pub body_radius: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            sense_radius: 1.0,
            body_radius: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

/// A circular target region, used by the clustering task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Vec2,
    pub radius: f64,
}

/// Target geometry for shape-forming tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Shape {
    /// `n` points evenly spaced on a circle, the first at angle zero.
    Circle { center: Vec2, radius: f64 },
    /// `n` points evenly spaced on a segment, endpoints included.
    Line { from: Vec2, to: Vec2 },
}

impl Shape {
    /// The `n` target points of this shape.
    pub fn points(&self, n: usize) -> Vec<Vec2> {
        match *self {
            Shape::Circle { center, radius } => (0..n)
                .map(|k| center + Vec2::from_polar(radius, std::f64::consts::TAU * k as f64 / n as f64))
                .collect(),
            Shape::Line { from, to } => {
                if n == 1 {
                    return vec![(from + to) * 0.5];
                }
                (0..n)
                    .map(|k| from + (to - from) * (k as f64 / (n - 1) as f64))
                    .collect()
            }
        }
    }
}

/// How workers are placed at tick 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SpawnLayout {
    /// Rejection sampling over `region` (arena inset by 0.25 m when absent).
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<Bounds>,
        min_separation: f64,
    },
    /// Evenly spaced on a randomly rotated ring, each robot jittered radially
    /// and tangentially by up to `jitter`.
    Ring { center: Vec2, radius: f64, jitter: f64 },
    /// Rejection sampling inside a disc of `radius` whose center is drawn
    /// uniformly from the arena inset by `radius`.
    Cluster { radius: f64, min_separation: f64 },
}

impl Default for SpawnLayout {
    fn default() -> Self {
        SpawnLayout::Uniform {
            region: None,
            min_separation: 0.4,
        }
    }
}

/// Arena geometry and task-specific fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layout {
    pub bounds: Bounds,
    pub spawn: SpawnLayout,
    /// Minimum spawn distance between workers and the prey or leader.
    pub target_clearance: f64,
    pub prey_visible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_region: Option<Bounds>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<Obstacle>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub landmarks: Vec<Vec2>,
    /// Clustering regions, one per quadrant in order 1..=4.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<Region>,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            bounds: Bounds::square(2.5),
            spawn: SpawnLayout::default(),
            target_clearance: 0.6,
            prey_visible: true,
            shape: None,
            eval_region: None,
            obstacles: Vec::new(),
            landmarks: Vec::new(),
            regions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    /// Integration step (s).
    pub dt: f64,
    pub max_ticks: u64,
    pub seed: u64,
    /// Standard deviation of the per-axis perception noise (m).
    pub noise_sigma: f64,
    pub record_every: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_ticks: 600,
            seed: 0,
            noise_sigma: 0.0,
            record_every: 1,
        }
    }
}

/// The ten benchmark tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Aggregation,
    Flocking,
    Shaping,
    Encircling,
    Crossing,
    Coverage,
    Exploration,
    Pursuing,
    Bridging,
    Clustering,
}

impl TaskKind {
    pub const ALL: [TaskKind; 10] = [
        TaskKind::Aggregation,
        TaskKind::Flocking,
        TaskKind::Shaping,
        TaskKind::Encircling,
        TaskKind::Crossing,
        TaskKind::Coverage,
        TaskKind::Exploration,
        TaskKind::Pursuing,
        TaskKind::Bridging,
        TaskKind::Clustering,
    ];

    /// The six tasks used for cross-method comparisons.
    pub const REPRESENTATIVE: [TaskKind; 6] = [
        TaskKind::Shaping,
        TaskKind::Encircling,
        TaskKind::Coverage,
        TaskKind::Aggregation,
        TaskKind::Flocking,
        TaskKind::Crossing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Aggregation => "aggregation",
            TaskKind::Flocking => "flocking",
            TaskKind::Shaping => "shaping",
            TaskKind::Encircling => "encircling",
            TaskKind::Crossing => "crossing",
            TaskKind::Coverage => "coverage",
            TaskKind::Exploration => "exploration",
            TaskKind::Pursuing => "pursuing",
            TaskKind::Bridging => "bridging",
            TaskKind::Clustering => "clustering",
        }
    }

    /// Metrics that decide success for this task.
    pub fn required_metrics(self) -> &'static [MetricName] {
        use MetricName::*;
        match self {
            TaskKind::Aggregation => &[DMaxmin],
            TaskKind::Flocking => &[VarSpat, DDtw],
            TaskKind::Shaping | TaskKind::Bridging => &[DProc],
            TaskKind::Encircling => &[DError],
            TaskKind::Crossing => &[RhoReach],
            TaskKind::Coverage => &[RhoArea, VarNnd],
            TaskKind::Exploration => &[RhoVisit],
            TaskKind::Pursuing => &[DAvgPrey, DMaxmin],
            TaskKind::Clustering => &[RAchieve],
        }
    }

    /// Scalar parameters the task's metrics or world setup read.
    pub fn required_params(self) -> &'static [&'static str] {
        match self {
            TaskKind::Aggregation | TaskKind::Shaping | TaskKind::Bridging | TaskKind::Coverage => &[],
            TaskKind::Flocking => &["separation_min"],
            TaskKind::Encircling => &["r_desired", "prey_speed", "prey_turn", "prey_margin"],
            TaskKind::Crossing => &["reach_tolerance", "separation_min"],
            TaskKind::Exploration => &["visit_tolerance"],
            TaskKind::Pursuing => &["prey_speed", "prey_turn", "prey_margin"],
            TaskKind::Clustering => &["achieve_tolerance"],
        }
    }

    /// Which moving target, if any, the world contains.
    pub fn target_kind(self) -> Option<RobotKind> {
        match self {
            TaskKind::Encircling => Some(RobotKind::Prey),
            TaskKind::Pursuing => Some(RobotKind::Leader),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind `{s}`"))
    }
}

/// Names of the evaluation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricName {
    DMaxmin,
    VarSpat,
    DDtw,
    DProc,
    DError,
    RhoReach,
    RhoArea,
    VarNnd,
    RhoVisit,
    DAvgPrey,
    RAchieve,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::DMaxmin => "d_maxmin",
            MetricName::VarSpat => "var_spat",
            MetricName::DDtw => "d_dtw",
            MetricName::DProc => "d_proc",
            MetricName::DError => "d_error",
            MetricName::RhoReach => "rho_reach",
            MetricName::RhoArea => "rho_area",
            MetricName::VarNnd => "var_nnd",
            MetricName::RhoVisit => "rho_visit",
            MetricName::DAvgPrey => "d_avg_prey",
            MetricName::RAchieve => "r_achieve",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Lt,
    Gt,
    Eq,
}

impl Comparator {
    /// Strict comparison as worded: "less than", "greater than", "equal to".
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Gt => value > threshold,
            Comparator::Eq => value == threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub comparator: Comparator,
    pub value: f64,
    /// When set, the effective threshold is `value` times the number of
    /// trajectory samples (used by the DTW metric).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub per_sample: bool,
}

impl Threshold {
    pub const fn lt(value: f64) -> Self {
        Self {
            comparator: Comparator::Lt,
            value,
            per_sample: false,
        }
    }

    pub const fn gt(value: f64) -> Self {
        Self {
            comparator: Comparator::Gt,
            value,
            per_sample: false,
        }
    }

    pub const fn eq(value: f64) -> Self {
        Self {
            comparator: Comparator::Eq,
            value,
            per_sample: false,
        }
    }
}

/// A complete, reproducible task description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub instruction: String,
    pub robot_count: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, Threshold>,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub robot: RobotParams,
    #[serde(default)]
    pub layout: Layout,
}

/// Category of a task-spec validation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecIssueKind {
    MissingThreshold,
    MissingParameter,
    NonPositiveParameter,
    UnknownTaskKind,
    InvalidLayout,
    Malformed,
}

/// One validation failure, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecIssue {
    pub kind: SpecIssueKind,
    pub path: String,
    pub message: String,
}

impl SpecIssue {
    fn new(kind: SpecIssueKind, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for SpecIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Error wrapper for a failed parse or validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid task spec: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct SpecErrors(pub Vec<SpecIssue>);

/// Parameters that must be strictly positive when present.
const POSITIVE_PARAMS: &[&str] = &[
    "r_desired",
    "reach_tolerance",
    "visit_tolerance",
    "achieve_tolerance",
    "prey_speed",
    "separation_min",
];

/// Parameters that may be zero but not negative.
const NON_NEGATIVE_PARAMS: &[&str] = &["prey_turn", "prey_margin"];

/// Checks every invariant of a task spec, reporting all violations at once.
pub fn validate_task_spec(spec: TaskSpec) -> Result<TaskSpec, SpecErrors> {
    use SpecIssueKind::*;
    let mut issues = Vec::new();

    for metric in spec.kind.required_metrics() {
        if !spec.thresholds.contains_key(metric.as_str()) {
            issues.push(SpecIssue::new(
                MissingThreshold,
                format!("thresholds.{metric}"),
                format!("task `{}` requires a threshold for `{metric}`", spec.kind),
            ));
        }
    }
    for (name, t) in &spec.thresholds {
        if !t.value.is_finite() {
            issues.push(SpecIssue::new(Malformed, format!("thresholds.{name}.value"), "not finite"));
        }
    }
    for name in spec.kind.required_params() {
        if !spec.params.contains_key(*name) {
            issues.push(SpecIssue::new(
                MissingParameter,
                format!("params.{name}"),
                format!("task `{}` requires parameter `{name}`", spec.kind),
            ));
        }
    }
    for (name, value) in &spec.params {
        let path = format!("params.{name}");
        if !value.is_finite() {
            issues.push(SpecIssue::new(Malformed, path, "not finite"));
        } else if POSITIVE_PARAMS.contains(&name.as_str()) && *value <= 0.0 {
            issues.push(SpecIssue::new(NonPositiveParameter, path, format!("must be > 0, got {value}")));
        } else if NON_NEGATIVE_PARAMS.contains(&name.as_str()) && *value < 0.0 {
            issues.push(SpecIssue::new(NonPositiveParameter, path, format!("must be >= 0, got {value}")));
        }
    }

    let positive = [
        ("trial.dt", spec.trial.dt),
        ("robot.v_max", spec.robot.v_max),
        ("robot.sense_radius", spec.robot.sense_radius),
        ("robot.body_radius", spec.robot.body_radius),
    ];
    for (path, value) in positive {
        if !value.is_finite() || value <= 0.0 {
            issues.push(SpecIssue::new(NonPositiveParameter, path, format!("must be > 0, got {value}")));
        }
    }
    if spec.trial.max_ticks < 1 {
        issues.push(SpecIssue::new(NonPositiveParameter, "trial.max_ticks", "must be >= 1"));
    }
    if spec.trial.record_every < 1 {
        issues.push(SpecIssue::new(NonPositiveParameter, "trial.record_every", "must be >= 1"));
    }
    if spec.trial.noise_sigma.is_nan() || spec.trial.noise_sigma < 0.0 {
        issues.push(SpecIssue::new(NonPositiveParameter, "trial.noise_sigma", "must be >= 0"));
    }
    if spec.robot.sense_radius <= spec.robot.body_radius {
        issues.push(SpecIssue::new(
            InvalidLayout,
            "robot.sense_radius",
            "sense radius must exceed body radius",
        ));
    }
    if spec.robot_count < 1 {
        issues.push(SpecIssue::new(NonPositiveParameter, "robot_count", "must be >= 1"));
    }
    let min_robots = match spec.kind {
        TaskKind::Aggregation | TaskKind::Flocking | TaskKind::Pursuing | TaskKind::Coverage | TaskKind::Crossing => 2,
        _ => 1,
    };
    if spec.robot_count < min_robots {
        issues.push(SpecIssue::new(
            InvalidLayout,
            "robot_count",
            format!("task `{}` needs at least {min_robots} robots", spec.kind),
        ));
    }

    if !spec.layout.bounds.is_valid() {
        issues.push(SpecIssue::new(InvalidLayout, "layout.bounds", "degenerate or non-finite bounds"));
    }
    if let Some(region) = spec.layout.eval_region {
        if !region.is_valid() {
            issues.push(SpecIssue::new(InvalidLayout, "layout.eval_region", "degenerate region"));
        }
    }
    match spec.kind {
        TaskKind::Shaping | TaskKind::Bridging if spec.layout.shape.is_none() => {
            issues.push(SpecIssue::new(InvalidLayout, "layout.shape", "shape tasks need a target shape"));
        }
        TaskKind::Exploration if spec.layout.landmarks.is_empty() => {
            issues.push(SpecIssue::new(InvalidLayout, "layout.landmarks", "exploration needs landmarks"));
        }
        TaskKind::Clustering if spec.layout.regions.len() != 4 => {
            issues.push(SpecIssue::new(
                InvalidLayout,
                "layout.regions",
                "clustering needs exactly four quadrant regions",
            ));
        }
        _ => {}
    }

    if issues.is_empty() {
        Ok(spec)
    } else {
        Err(SpecErrors(issues))
    }
}

impl TaskSpec {
    /// Parses and validates a task file.
    pub fn from_toml_str(text: &str) -> Result<TaskSpec, SpecErrors> {
        let value: toml::Value = toml::from_str(text)
            .map_err(|e| SpecErrors(vec![SpecIssue::new(SpecIssueKind::Malformed, "", e.to_string())]))?;
        if let Some(kind) = value.get("kind").and_then(toml::Value::as_str) {
            if TaskKind::from_str(kind).is_err() {
                return Err(SpecErrors(vec![SpecIssue::new(
                    SpecIssueKind::UnknownTaskKind,
                    "kind",
                    format!("unknown task kind `{kind}`"),
                )]));
            }
        }
        let spec: TaskSpec = value
            .try_into()
            .map_err(|e: toml::de::Error| SpecErrors(vec![SpecIssue::new(SpecIssueKind::Malformed, "", e.to_string())]))?;
        validate_task_spec(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<TaskSpec, SpecErrors> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            SpecErrors(vec![SpecIssue::new(
                SpecIssueKind::Malformed,
                path.display().to_string(),
                e.to_string(),
            )])
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML rendering; map keys are emitted in sorted order.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("task spec is always representable in TOML")
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    /// Parameter lookup with a fallback for optional knobs.
    pub fn param_or(&self, name: &str, default: f64) -> f64 {
        self.param(name).unwrap_or(default)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.trial.seed = seed;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.trial.noise_sigma = sigma;
        self
    }

    /// Target points for shape-forming tasks.
    pub fn shape_targets(&self) -> Option<Vec<Vec2>> {
        self.layout.shape.map(|s| s.points(self.robot_count))
    }

    /// The default spec for a task kind, identical to the shipped task file.
    pub fn default_for(kind: TaskKind) -> TaskSpec {
        defaults::spec_for(kind)
    }
}

mod defaults {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn thresholds(pairs: &[(MetricName, Threshold)]) -> BTreeMap<String, Threshold> {
        pairs.iter().map(|(k, v)| (k.as_str().to_string(), *v)).collect()
    }

    pub(super) fn spec_for(kind: TaskKind) -> TaskSpec {
        use MetricName::*;
        let mut layout = Layout::default();
        let (instruction, robot_count, params, thresholds) = match kind {
            TaskKind::Aggregation => (
                "Gather all robots into one tight group as fast as possible without any two robots colliding.",
                8,
                params(&[]),
                thresholds(&[(DMaxmin, Threshold::lt(1.0))]),
            ),
            TaskKind::Flocking => {
                layout.spawn = SpawnLayout::Cluster {
                    radius: 0.9,
                    min_separation: 0.5,
                };
                (
                    "Move together as one flock. Stay connected to the group (cohesion), match the \
                     heading of nearby robots (alignment), and never come closer than 0.5 m to another \
                     robot (separation).",
                    5,
                    params(&[("separation_min", 0.5)]),
                    thresholds(&[
                        (VarSpat, Threshold::lt(1.0)),
                        (
                            DDtw,
                            Threshold {
                                comparator: Comparator::Lt,
                                value: 0.5,
                                per_sample: true,
                            },
                        ),
                    ]),
                )
            }
            TaskKind::Shaping => {
                layout.shape = Some(Shape::Circle {
                    center: Vec2::ZERO,
                    radius: 1.5,
                });
                (
                    "Form the target shape. Every robot gets its own point on the shape, drives to it \
                     and holds that position.",
                    8,
                    params(&[]),
                    thresholds(&[(DProc, Threshold::lt(0.1))]),
                )
            }
            TaskKind::Encircling => (
                "Encircle the prey: spread out evenly on a circle of radius 1 m centered on the prey. \
                 Each robot takes one angle on the circle and keeps adjusting its position as the prey moves.",
                6,
                params(&[
                    ("prey_margin", 1.3),
                    ("prey_speed", 0.3),
                    ("prey_turn", 0.4),
                    ("r_desired", 1.0),
                ]),
                thresholds(&[(DError, Threshold::lt(0.1))]),
            ),
            TaskKind::Crossing => {
                layout.spawn = SpawnLayout::Ring {
                    center: Vec2::ZERO,
                    radius: 2.0,
                    jitter: 0.05,
                };
                (
                    "Each robot drives to the starting position of the robot that was farthest away from \
                     it at the start, keeping at least 15 cm from other robots and from obstacles.",
                    8,
                    params(&[("reach_tolerance", 0.1), ("separation_min", 0.15)]),
                    thresholds(&[(RhoReach, Threshold::eq(1.0))]),
                )
            }
            TaskKind::Coverage => {
                // Sections form a 3x3 grid over the arena; the occupied-area
                // ratio is taken against the rectangle spanned by the section
                // centers, the area robots can actually occupy.
                let half = 2.5 * 2.0 / 3.0;
                layout.eval_region = Some(Bounds::square(half));
                // Start bunched up so that spreading out is the actual task.
                layout.spawn = SpawnLayout::Cluster {
                    radius: 0.9,
                    min_separation: 0.4,
                };
                (
                    "Split the arena into as many sections as there are robots. Each robot moves to the \
                     center of its own section so the whole arena is covered.",
                    9,
                    params(&[]),
                    thresholds(&[(RhoArea, Threshold::gt(0.8)), (VarNnd, Threshold::lt(0.1))]),
                )
            }
            TaskKind::Exploration => {
                layout.landmarks = [
                    (-2.0, -2.0),
                    (-2.0, 0.0),
                    (-2.0, 2.0),
                    (-1.0, -1.0),
                    (-1.0, 1.0),
                    (0.0, -2.0),
                    (0.0, 2.0),
                    (1.0, -1.0),
                    (1.0, 1.0),
                    (2.0, -2.0),
                    (2.0, 0.0),
                    (2.0, 2.0),
                ]
                .iter()
                .map(|&(x, y)| Vec2::new(x, y))
                .collect();
                (
                    "Explore every unexplored area. Give each robot an efficient sequence of areas to \
                     visit based on the number of robots and the unexplored regions, then visit them.",
                    6,
                    params(&[("visit_tolerance", 0.1)]),
                    thresholds(&[(RhoVisit, Threshold::eq(1.0))]),
                )
            }
            TaskKind::Pursuing => {
                layout.obstacles = vec![
                    Obstacle {
                        center: Vec2::new(-1.6, 1.6),
                        radius: 0.2,
                    },
                    Obstacle {
                        center: Vec2::new(1.6, -1.6),
                        radius: 0.2,
                    },
                ];
                (
                    "Flock with all robots and follow the leader robot, whose motion is unpredictable. \
                     Stay connected (cohesion), move in sync (alignment), keep a safe personal space \
                     (separation) and do not hit obstacles.",
                    6,
                    params(&[("prey_margin", 0.8), ("prey_speed", 0.25), ("prey_turn", 0.4)]),
                    thresholds(&[(DAvgPrey, Threshold::lt(1.0)), (DMaxmin, Threshold::lt(1.0))]),
                )
            }
            TaskKind::Bridging => {
                layout.shape = Some(Shape::Line {
                    from: Vec2::new(0.0, -2.0),
                    to: Vec2::new(0.0, 2.0),
                });
                (
                    "Form an evenly spaced straight-line bridge along x = 0 between y = -2 and y = 2.",
                    8,
                    params(&[]),
                    thresholds(&[(DProc, Threshold::lt(0.1))]),
                )
            }
            TaskKind::Clustering => {
                layout.regions = [(1.5, 1.5), (-1.5, 1.5), (-1.5, -1.5), (1.5, -1.5)]
                    .iter()
                    .map(|&(x, y)| Region {
                        center: Vec2::new(x, y),
                        radius: 0.6,
                    })
                    .collect();
                (
                    "Robots that start in the same quadrant gather in the designated area of that quadrant.",
                    8,
                    params(&[("achieve_tolerance", 0.1)]),
                    thresholds(&[(RAchieve, Threshold::eq(1.0))]),
                )
            }
        };
        TaskSpec {
            kind,
            instruction: instruction.to_string(),
            robot_count,
            params,
            thresholds,
            trial: TrialConfig::default(),
            robot: RobotParams::default(),
            layout,
        }
    }
}

/// Sampled positions of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub robot_id: u32,
    pub samples: Vec<(u64, Vec2)>,
}

impl Trajectory {
    pub fn new(robot_id: u32) -> Self {
        Self {
            robot_id,
            samples: Vec::new(),
        }
    }

    /// Builds a trajectory from consecutive positions at ticks 0, 1, 2, ...
    pub fn from_points(robot_id: u32, points: &[Vec2]) -> Self {
        Self {
            robot_id,
            samples: points.iter().enumerate().map(|(t, p)| (t as u64, *p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<Vec2> {
        self.samples.iter().map(|(_, p)| *p).collect()
    }

    pub fn last(&self) -> Option<Vec2> {
        self.samples.last().map(|(_, p)| *p)
    }

    pub fn first(&self) -> Option<Vec2> {
        self.samples.first().map(|(_, p)| *p)
    }

    /// Largest distance between consecutive samples.
    pub fn max_step(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].1.distance(w[1].1))
            .fold(0.0, f64::max)
    }
}

/// One evaluated metric with its threshold and verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparator: Comparator,
    pub pass: bool,
}

/// Per-metric verdicts for one trial; `success` is their conjunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub seed: u64,
    pub success: bool,
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn new(task: TaskKind, seed: u64, entries: Vec<MetricEntry>) -> Self {
        let success = entries.iter().all(|e| e.pass);
        Self {
            task,
            seed,
            success,
            entries,
        }
    }

    pub fn get(&self, name: &str) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failing(&self) -> impl Iterator<Item = &MetricEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("metric report is always representable in TOML")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encircling_defaults_validate() {
        let spec = TaskSpec::default_for(TaskKind::Encircling);
        assert_eq!(spec.param("r_desired"), Some(1.0));
        assert_eq!(spec.thresholds["d_error"], Threshold::lt(0.1));
        assert!(validate_task_spec(spec).is_ok());
    }

    #[test]
    fn every_default_spec_validates() {
        for kind in TaskKind::ALL {
            let spec = TaskSpec::default_for(kind);
            validate_task_spec(spec).unwrap_or_else(|e| panic!("{kind}: {e}"));
        }
    }

    #[test]
    fn zero_dt_is_rejected() {
        let mut spec = TaskSpec::default_for(TaskKind::Aggregation);
        spec.trial.dt = 0.0;
        let err = validate_task_spec(spec).unwrap_err();
        assert!(err
            .0
            .iter()
            .any(|i| i.kind == SpecIssueKind::NonPositiveParameter && i.path == "trial.dt"));
    }

    #[test]
    fn missing_threshold_is_reported() {
        let mut spec = TaskSpec::default_for(TaskKind::Aggregation);
        spec.thresholds.remove("d_maxmin");
        let err = validate_task_spec(spec).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].kind, SpecIssueKind::MissingThreshold);
        assert_eq!(err.0[0].path, "thresholds.d_maxmin");
    }

    #[test]
    fn all_violations_reported_together() {
        let mut spec = TaskSpec::default_for(TaskKind::Encircling);
        spec.thresholds.clear();
        spec.params.insert("r_desired".into(), -1.0);
        spec.trial.dt = -0.1;
        let err = validate_task_spec(spec).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn unknown_kind_in_file() {
        let text = TaskSpec::default_for(TaskKind::Shaping)
            .to_toml_string()
            .replace("kind = \"shaping\"", "kind = \"juggling\"");
        let err = TaskSpec::from_toml_str(&text).unwrap_err();
        assert_eq!(err.0[0].kind, SpecIssueKind::UnknownTaskKind);
    }

    #[test]
    fn paper_defaults() {
        let robot = RobotParams::default();
        assert_eq!(robot.v_max, 0.5);
        assert_eq!(robot.sense_radius, 1.0);
        assert_eq!(TaskSpec::default_for(TaskKind::Crossing).param("separation_min"), Some(0.15));
        assert_eq!(TaskSpec::default_for(TaskKind::Flocking).param("separation_min"), Some(0.5));
    }

    #[test]
    fn shape_points() {
        let line = Shape::Line {
            from: Vec2::new(0.0, -2.0),
            to: Vec2::new(0.0, 2.0),
        };
        let pts = line.points(5);
        assert_eq!(pts[0], Vec2::new(0.0, -2.0));
        assert_eq!(pts[4], Vec2::new(0.0, 2.0));
        assert_eq!(pts[2], Vec2::new(0.0, 0.0));
        let circle = Shape::Circle {
            center: Vec2::ZERO,
            radius: 1.0,
        };
        assert!(circle.points(8).iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn report_success_is_conjunction() {
        let entry = |pass| MetricEntry {
            name: "x".into(),
            value: 0.0,
            threshold: 1.0,
            comparator: Comparator::Lt,
            pass,
        };
        assert!(MetricReport::new(TaskKind::Aggregation, 0, vec![entry(true), entry(true)]).success);
        assert!(!MetricReport::new(TaskKind::Aggregation, 0, vec![entry(true), entry(false)]).success);
    }
}
