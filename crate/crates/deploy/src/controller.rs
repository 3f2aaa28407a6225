//! Closed-loop trials against deployed nodes.

use std::collections::BTreeMap;

use swarmgen_core::bundle::{Diagnostic, PolicyBundle};
use swarmgen_core::trial::{Assignments, Controller, PolicyError};
use swarmgen_core::world::{Observation, WorldState};
use swarmgen_core::{TaskSpec, Vec2};

use crate::host::Deployment;
use crate::local::LocalRuntime;

/// Drives a trial through a running deployment: the global skill on the
/// control-station runtime, local decisions on the nodes.
pub struct DeployedController<'a> {
    deployment: &'a mut Deployment,
    station: &'a LocalRuntime,
    bundle: PolicyBundle,
    /// Runtime diagnostics collected during the trial, by robot.
    pub diagnostics: BTreeMap<u32, Vec<Diagnostic>>,
    pub substituted: u64,
}

impl<'a> DeployedController<'a> {
    pub fn new(deployment: &'a mut Deployment, station: &'a LocalRuntime, bundle: PolicyBundle) -> Self {
        DeployedController {
            deployment,
            station,
            bundle,
            diagnostics: BTreeMap::new(),
            substituted: 0,
        }
    }
}

impl Controller for DeployedController<'_> {
    fn name(&self) -> String {
        "deployed".into()
    }

    fn global_step(&mut self, world: &WorldState, spec: &TaskSpec) -> Result<Option<Assignments>, PolicyError> {
        let failed = self.deployment.init_trial(spec, world);
        if let Some(id) = failed.first() {
            return Err(PolicyError::Crash(format!("node {id} did not accept INIT")));
        }
        let missing: Vec<u32> = world
            .worker_ids()
            .into_iter()
            .filter(|id| !self.deployment.running().contains(id))
            .collect();
        if !missing.is_empty() {
            return Err(PolicyError::Crash(format!("no running node for robots {missing:?}")));
        }
        self.station
            .invoke_global(&self.bundle, spec, world)
            .map_err(|e| PolicyError::Crash(e.to_string()))
    }

    fn act(&mut self, observations: &[Observation]) -> Result<BTreeMap<u32, Vec2>, PolicyError> {
        let obs: BTreeMap<u32, Observation> = observations.iter().map(|o| (o.self_state.id, o.clone())).collect();
        let r = self.deployment.tick_exchange(&obs);
        self.substituted += r.substituted.len() as u64;
        for (id, d) in r.diagnostics {
            self.diagnostics.entry(id).or_default().extend(d);
        }
        if let Some(id) = r.newly_failed.first() {
            return Err(PolicyError::Timeout(format!(
                "node {id} missed {} consecutive tick deadlines",
                self.deployment.fault_limit
            )));
        }
        Ok(r.commands)
    }
}
