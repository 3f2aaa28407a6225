//! Task model, deterministic 2D swarm simulator, task metrics and reference
//! controllers.

pub mod assignment;
pub mod baselines;
pub mod bundle;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod render;
pub mod rng;
pub mod trial;
pub mod world;

pub use geometry::{Bounds, Vec2};
pub use model::{MetricReport, TaskKind, TaskSpec};
pub use trial::{run_trial, Controller, TrialLog};
