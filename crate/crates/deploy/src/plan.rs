//! Playbooks: ordered, idempotent provisioning steps run on every node.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    EnsureDirectories,
    InstallRuntime,
    PullEnvironmentImage,
    PushBundle,
    Start,
    Healthcheck,
}

impl Step {
    pub const ALL: [Step; 6] = [
        Step::EnsureDirectories,
        Step::InstallRuntime,
        Step::PullEnvironmentImage,
        Step::PushBundle,
        Step::Start,
        Step::Healthcheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::EnsureDirectories => "ensure-directories",
            Step::InstallRuntime => "install-runtime",
            Step::PullEnvironmentImage => "pull-environment-image",
            Step::PushBundle => "push-bundle",
            Step::Start => "start",
            Step::Healthcheck => "healthcheck",
        }
    }

    /// Steps that prepare a node before any bundle exists.
    pub fn is_provisioning(self) -> bool {
        matches!(self, Step::EnsureDirectories | Step::InstallRuntime | Step::PullEnvironmentImage)
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Step {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Step::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown step {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub step: Step,
    pub timeout_ms: u64,
    /// Emulated remote latency added to the step's real work.
    #[serde(default)]
    pub latency_ms: u64,
}

impl StepConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.latency_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployPlan {
    pub name: String,
    /// Size of the emulated environment image archive.
    pub image_kib: u64,
    /// How long teardown waits for a node to exit after SHUTDOWN.
    pub grace_ms: u64,
    pub steps: Vec<StepConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("invalid deploy plan: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl Default for DeployPlan {
    fn default() -> Self {
        let step = |step, timeout_ms, latency_ms| StepConfig { step, timeout_ms, latency_ms };
        DeployPlan {
            name: "default".into(),
            image_kib: 1024,
            grace_ms: 500,
            steps: vec![
                step(Step::EnsureDirectories, 2_000, 5),
                step(Step::InstallRuntime, 10_000, 60),
                step(Step::PullEnvironmentImage, 30_000, 150),
                step(Step::PushBundle, 5_000, 5),
                step(Step::Start, 10_000, 0),
                step(Step::Healthcheck, 5_000, 0),
            ],
        }
    }
}

impl DeployPlan {
    pub fn from_toml_str(text: &str) -> Result<Self, PlanError> {
        let plan: DeployPlan = toml::from_str(text).map_err(|e| PlanError::Invalid(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    /// Every step exactly once, in playbook order.
    pub fn validate(&self) -> Result<(), PlanError> {
        let order: Vec<Step> = self.steps.iter().map(|s| s.step).collect();
        if order != Step::ALL {
            return Err(PlanError::Invalid(format!(
                "steps must be {} in that order",
                Step::ALL.map(Step::as_str).join(", ")
            )));
        }
        if self.steps.iter().any(|s| s.timeout_ms == 0) {
            return Err(PlanError::Invalid("step timeouts must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self, step: Step) -> &StepConfig {
        self.steps.iter().find(|s| s.step == step).expect("validated plan has every step")
    }

    pub fn grace(&self) -> Duration {
        Duration::from_millis(self.grace_ms)
    }
}
