//! Reference controllers: Boids, reciprocal avoidance and per-task experts.
//!
//! Tuning lives in `baselines/params.toml`; [`BaselineParams::default`]
//! mirrors that file.

pub mod avoidance;
pub mod boids;
pub mod expert;

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use avoidance::{avoid_velocity, AvoidanceParams, Avoided};
pub use boids::{boids_velocity, BoidsParams};
pub use expert::ExpertPolicy;

use crate::model::TaskKind;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("no expert policy for {0:?}")]
    UnsupportedKind(String),
    #[error("invalid baseline parameters: {0}")]
    InvalidParams(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Gains used by the expert controllers beyond Boids and avoidance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingParams {
    /// Proportional gain toward a goal point (1/s).
    pub gain: f64,
    /// A route waypoint counts as reached within this distance (m).
    pub arrive_tolerance: f64,
    /// Cruise speed along the flocking loop (m/s).
    pub flock_speed: f64,
    /// Arc-length gap between consecutive robots on the loop (m).
    pub flock_spacing: f64,
    pub flock_loop_radius: f64,
    /// Radius of the ring robots share inside a clustering region (m).
    pub cluster_ring: f64,
    /// Obstacle surface distance below which pursuers are pushed away (m).
    pub obstacle_clearance: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            gain: 2.0,
            arrive_tolerance: 0.03,
            flock_speed: 0.35,
            flock_spacing: 0.6,
            flock_loop_radius: 1.2,
            cluster_ring: 0.35,
            obstacle_clearance: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    pub boids: BoidsParams,
    pub avoidance: AvoidanceParams,
    pub tracking: TrackingParams,
}

impl BaselineParams {
    pub fn from_toml_str(text: &str) -> Result<Self, BaselineError> {
        let params: Self = toml::from_str(text).map_err(|e| BaselineError::InvalidParams(e.to_string()))?;
        if !params.boids.is_valid() {
            return Err(BaselineError::InvalidParams("boids weights must be >= 0 and separation_distance > 0".into()));
        }
        if !params.avoidance.is_valid() {
            return Err(BaselineError::InvalidParams("avoidance parameters must be positive".into()));
        }
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("baseline params serialize")
    }
}

/// The expert for a task name such as `"encircling"`.
pub fn expert_policy(name: &str, params: BaselineParams) -> Result<ExpertPolicy, BaselineError> {
    let kind = TaskKind::from_str(name).map_err(|_| BaselineError::UnsupportedKind(name.to_string()))?;
    Ok(ExpertPolicy::new(kind, params))
}
