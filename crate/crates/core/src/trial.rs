//! The observe, act, step loop and its recorded log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::geometry::Vec2;
use crate::metrics::SuccessTracker;
use crate::model::{validate_task_spec, TaskKind, TaskSpec, Trajectory};
use crate::rng::seeded_stream;
use crate::world::{init_world, perceive, step, Goal, NoiseModel, Observation, SimError, WorldState};

/// Consecutive successful ticks after which a trial stops early.
pub const EARLY_FINISH_TICKS: u64 = 50;

/// Goals handed out by a policy's one-shot global step, keyed by robot id.
pub type Assignments = BTreeMap<u32, Goal>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy timed out: {0}")]
    Timeout(String),
    #[error("policy crashed: {0}")]
    Crash(String),
}

/// A swarm policy driven by the trial loop.
pub trait Controller {
    /// Short name recorded in the log header.
    fn name(&self) -> String;

    /// Runs once on the full world before tick 0.
    fn global_step(&mut self, _world: &WorldState, _spec: &TaskSpec) -> Result<Option<Assignments>, PolicyError> {
        Ok(None)
    }

    /// One velocity command per worker, given observations in ascending id
    /// order. Workers left out of the map hold still.
    fn act(&mut self, observations: &[Observation]) -> Result<BTreeMap<u32, Vec2>, PolicyError>;
}

/// Always commands zero velocity.
#[derive(Debug, Default, Clone, Copy)]
pub struct Idle;

impl Controller for Idle {
    fn name(&self) -> String {
        "idle".into()
    }

    fn act(&mut self, observations: &[Observation]) -> Result<BTreeMap<u32, Vec2>, PolicyError> {
        Ok(observations.iter().map(|o| (o.self_state.id, Vec2::ZERO)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialOutcome {
    /// Ran all `max_ticks`.
    Completed,
    /// Success held for [`EARLY_FINISH_TICKS`] consecutive ticks.
    EarlyFinish,
    PolicyTimeout,
    PolicyCrash,
}

impl TrialOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialOutcome::Completed => "completed",
            TrialOutcome::EarlyFinish => "early-finish",
            TrialOutcome::PolicyTimeout => "policy-timeout",
            TrialOutcome::PolicyCrash => "policy-crash",
        }
    }

    pub fn is_policy_failure(self) -> bool {
        matches!(self, TrialOutcome::PolicyTimeout | TrialOutcome::PolicyCrash)
    }
}

impl FromStr for TrialOutcome {
    type Err = LogParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "completed" => TrialOutcome::Completed,
            "early-finish" => TrialOutcome::EarlyFinish,
            "policy-timeout" => TrialOutcome::PolicyTimeout,
            "policy-crash" => TrialOutcome::PolicyCrash,
            other => return Err(LogParseError::new(1, format!("unknown outcome {other:?}"))),
        })
    }
}

/// One recorded robot sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub tick: u64,
    pub robot_id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
}

/// Everything a trial produced. Only the header and records are persisted;
/// the remaining fields are available for in-process runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub task: TaskKind,
    pub policy: String,
    pub seed: u64,
    pub spec_hash: String,
    pub dt: f64,
    pub v_max: f64,
    pub worker_ids: Vec<u32>,
    pub target_id: Option<u32>,
    pub ticks_run: u64,
    pub outcome: TrialOutcome,
    /// Sorted by (tick, robot_id).
    pub records: Vec<LogRecord>,
    pub failure: Option<String>,
    pub spec: Option<TaskSpec>,
    pub commands: Vec<BTreeMap<u32, Vec2>>,
    pub final_world: Option<WorldState>,
    pub wall_clock: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trial log line {line}: {message}")]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

impl LogParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

const LOG_MAGIC: &str = "#swarmgen-trial v1";
const LOG_COLUMNS: &str = "tick,robot_id,x,y,vx,vy";

impl TrialLog {
    fn trajectory(&self, id: u32) -> Trajectory {
        Trajectory {
            robot_id: id,
            samples: self
                .records
                .iter()
                .filter(|r| r.robot_id == id)
                .map(|r| (r.tick, r.position))
                .collect(),
        }
    }

    pub fn worker_trajectories(&self) -> Vec<Trajectory> {
        self.worker_ids.iter().map(|&id| self.trajectory(id)).collect()
    }

    pub fn target_trajectory(&self) -> Option<Trajectory> {
        self.target_id.map(|id| self.trajectory(id))
    }

    /// Ticks at which samples were recorded, ascending.
    pub fn sample_ticks(&self) -> Vec<u64> {
        let mut ticks: Vec<u64> = self.records.iter().map(|r| r.tick).collect();
        ticks.dedup();
        ticks
    }

    /// Worker positions at a recorded tick, in id order.
    pub fn positions_at(&self, tick: u64) -> Vec<Vec2> {
        self.worker_ids
            .iter()
            .filter_map(|&id| {
                self.records
                    .iter()
                    .find(|r| r.tick == tick && r.robot_id == id)
                    .map(|r| r.position)
            })
            .collect()
    }

    pub fn target_at(&self, tick: u64) -> Option<Vec2> {
        let id = self.target_id?;
        self.records
            .iter()
            .find(|r| r.tick == tick && r.robot_id == id)
            .map(|r| r.position)
    }

    pub fn initial_positions(&self) -> Vec<Vec2> {
        self.sample_ticks().first().map_or_else(Vec::new, |&t| self.positions_at(t))
    }

    pub fn final_positions(&self) -> Vec<Vec2> {
        self.sample_ticks().last().map_or_else(Vec::new, |&t| self.positions_at(t))
    }

    /// Largest per-tick displacement of any worker between consecutive samples.
    pub fn max_step_per_tick(&self) -> f64 {
        self.worker_trajectories()
            .iter()
            .flat_map(|t| {
                t.samples.windows(2).map(|w| {
                    let ticks = (w[1].0 - w[0].0).max(1) as f64;
                    w[0].1.distance(w[1].1) / ticks
                })
            })
            .fold(0.0, f64::max)
    }

    /// The persisted form: one header line, a column line, then one line per record.
    pub fn to_text(&self) -> String {
        let workers = self.worker_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let target = self.target_id.map_or_else(|| "-".to_string(), |t| t.to_string());
        let mut out = format!(
            "{LOG_MAGIC} task={} policy={} seed={} spec={} dt={} v_max={} workers={} target={} ticks={} outcome={}\n{LOG_COLUMNS}\n",
            self.task,
            self.policy,
            self.seed,
            self.spec_hash,
            self.dt,
            self.v_max,
            workers,
            target,
            self.ticks_run,
            self.outcome.as_str(),
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.tick, r.robot_id, r.position.x, r.position.y, r.velocity.x, r.velocity.y
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LogParseError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LogParseError::new(1, "empty log"))?;
        let fields = header
            .strip_prefix(LOG_MAGIC)
            .ok_or_else(|| LogParseError::new(1, "missing trial log header"))?;
        let kv: BTreeMap<&str, &str> = fields.split_whitespace().filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| LogParseError::new(1, format!("header lacks {k}")));
        let num = |k: &str| -> Result<f64, LogParseError> {
            get(k)?.parse().map_err(|_| LogParseError::new(1, format!("bad {k}")))
        };
        let int = |k: &str| -> Result<u64, LogParseError> {
            get(k)?.parse().map_err(|_| LogParseError::new(1, format!("bad {k}")))
        };

        let task = TaskKind::from_str(get("task")?).map_err(|e| LogParseError::new(1, e.to_string()))?;
        let workers = get("workers")?;
        let worker_ids = if workers.is_empty() {
            Vec::new()
        } else {
            workers
                .split(',')
                .map(|w| w.parse().map_err(|_| LogParseError::new(1, "bad workers")))
                .collect::<Result<Vec<u32>, _>>()?
        };
        let target_id = match get("target")? {
            "-" => None,
            t => Some(t.parse().map_err(|_| LogParseError::new(1, "bad target"))?),
        };

        if lines.next() != Some(LOG_COLUMNS) {
            return Err(LogParseError::new(2, "missing column line"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 3;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(LogParseError::new(lineno, "expected 6 columns"));
            }
            let f = |j: usize| -> Result<f64, LogParseError> {
                cols[j].parse().map_err(|_| LogParseError::new(lineno, format!("bad number {:?}", cols[j])))
            };
            records.push(LogRecord {
                tick: cols[0].parse().map_err(|_| LogParseError::new(lineno, "bad tick"))?,
                robot_id: cols[1].parse().map_err(|_| LogParseError::new(lineno, "bad robot id"))?,
                position: Vec2::new(f(2)?, f(3)?),
                velocity: Vec2::new(f(4)?, f(5)?),
            });
        }

        Ok(TrialLog {
            task,
            policy: get("policy")?.to_string(),
            seed: int("seed")?,
            spec_hash: get("spec")?.to_string(),
            dt: num("dt")?,
            v_max: num("v_max")?,
            worker_ids,
            target_id,
            ticks_run: int("ticks")?,
            outcome: get("outcome")?.parse()?,
            records,
            failure: None,
            spec: None,
            commands: Vec::new(),
            final_world: None,
            wall_clock: None,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?)?)
    }
}

fn record_world(world: &WorldState, records: &mut Vec<LogRecord>) {
    records.extend(world.robots.iter().map(|r| LogRecord {
        tick: world.tick,
        robot_id: r.id,
        position: r.position,
        velocity: r.velocity,
    }));
}

/// Runs one trial of `controller` on `spec` with the given seed.
///
/// Policy errors end the trial and are recorded in the log outcome; only
/// invalid specs, placement failures and malformed commands are returned as
/// errors.
pub fn run_trial(controller: &mut dyn Controller, spec: &TaskSpec, seed: u64) -> Result<TrialLog, SimError> {
    let started = Instant::now();
    let spec = validate_task_spec(spec.clone())?;
    let mut world = init_world(&spec, seed)?;
    let noise = NoiseModel::new(spec.trial.noise_sigma);
    let mut noise_rng = seeded_stream(seed, &noise.label);
    let record_every = spec.trial.record_every.max(1);

    let mut records = Vec::new();
    let mut commands = Vec::new();
    record_world(&world, &mut records);

    let mut outcome = TrialOutcome::Completed;
    let mut failure = None;
    let fail = |e: PolicyError| match e {
        PolicyError::Timeout(m) => (TrialOutcome::PolicyTimeout, m),
        PolicyError::Crash(m) => (TrialOutcome::PolicyCrash, m),
    };

    let goals = match controller.global_step(&world, &spec) {
        Ok(g) => g.unwrap_or_default(),
        Err(e) => {
            let (o, m) = fail(e);
            outcome = o;
            failure = Some(m);
            Assignments::new()
        }
    };

    let mut tracker = SuccessTracker::new(&spec, &world);
    let mut streak = 0u64;
    let ids = world.worker_ids();

    while failure.is_none() && world.tick < spec.trial.max_ticks {
        let mut observations = Vec::with_capacity(ids.len());
        for &id in &ids {
            let mut obs = perceive(&world, id, &spec.robot, &noise, &mut noise_rng)?;
            obs.assigned_goal = goals.get(&id).cloned();
            observations.push(obs);
        }
        let cmds = match controller.act(&observations) {
            Ok(c) => c,
            Err(e) => {
                let (o, m) = fail(e);
                outcome = o;
                failure = Some(m);
                break;
            }
        };
        world = step(&world, &cmds, spec.trial.dt)?;
        commands.push(cmds);

        let last = world.tick == spec.trial.max_ticks;
        let finished = tracker.enabled() && {
            if tracker.observe(&world) {
                streak += 1;
            } else {
                streak = 0;
            }
            streak >= EARLY_FINISH_TICKS
        };
        if world.tick % record_every == 0 || last || finished {
            record_world(&world, &mut records);
        }
        if finished {
            outcome = TrialOutcome::EarlyFinish;
            break;
        }
    }

    Ok(TrialLog {
        task: spec.kind,
        policy: controller.name(),
        seed,
        spec_hash: spec.content_hash(),
        dt: spec.trial.dt,
        v_max: spec.robot.v_max,
        worker_ids: ids,
        target_id: world.target().map(|t| t.id),
        ticks_run: world.tick,
        outcome,
        records,
        failure,
        spec: Some(spec),
        commands,
        final_world: Some(world),
        wall_clock: Some(started.elapsed()),
    })
}
