//! The control-station runtime: static checks and the one-shot global skill.

use std::sync::Mutex;
use std::time::Duration;

use swarmgen_core::baselines::BaselineParams;
use swarmgen_core::bundle::{CheckError, CodeChecker, Diagnostic, DiagnosticKind, PolicyBundle};
use swarmgen_core::trial::Assignments;
use swarmgen_core::world::WorldState;
use swarmgen_core::TaskSpec;

use crate::launcher::Launcher;
use crate::link::{Link, Recv, Transcript};
use crate::runtime::NodeFaults;
use crate::wire::{AssignReply, AssignRequest, CheckRequest, DiagPayload, Empty, Kind, Message};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GlobalError {
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("global skill failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Diagnostics(Vec<Diagnostic>),
    #[error("runtime did not answer ASSIGN_REQUEST in time")]
    Timeout,
    #[error("runtime unavailable: {0}")]
    Unavailable(String),
}

struct Inner {
    link: Option<Link>,
    seq: u64,
}

pub struct LocalRuntime {
    inner: Mutex<Inner>,
    timeout: Duration,
    _scratch: Option<tempfile::TempDir>,
}

enum Exchange {
    Reply(Message),
    Timeout,
    Closed,
}

impl LocalRuntime {
    pub fn spawn(launcher: &Launcher, params: BaselineParams) -> std::io::Result<Self> {
        Self::spawn_with_faults(launcher, params, &NodeFaults::default())
    }

    pub fn spawn_with_faults(launcher: &Launcher, params: BaselineParams, faults: &NodeFaults) -> std::io::Result<Self> {
        let (link, scratch) = launcher.spawn_local(params, faults)?;
        Ok(LocalRuntime {
            inner: Mutex::new(Inner { link: Some(link), seq: 0 }),
            timeout: DEFAULT_TIMEOUT,
            _scratch: scratch,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn exchange(&self, kind: Kind, payload: &impl serde::Serialize) -> Exchange {
        let mut inner = self.inner.lock().expect("runtime lock");
        inner.seq += 1;
        let seq = inner.seq;
        let Some(link) = inner.link.as_mut() else { return Exchange::Closed };
        if link.send(&Message::new(kind, seq, payload)).is_err() {
            return Exchange::Closed;
        }
        let deadline = std::time::Instant::now() + self.timeout;
        loop {
            match link.recv_until(deadline) {
                Recv::Frame(m) if m.seq == seq => return Exchange::Reply(m),
                Recv::Frame(_) => {}
                Recv::Timeout => return Exchange::Timeout,
                Recv::Closed => return Exchange::Closed,
            }
        }
    }

    /// Sends CHECK with the bundle inline; an empty result means the code
    /// parses and its entry points resolve.
    pub fn check_code(&self, bundle: &PolicyBundle) -> Result<Vec<Diagnostic>, CheckError> {
        let req = CheckRequest { bundle: Some(bundle.into()) };
        match self.exchange(Kind::Check, &req) {
            Exchange::Reply(m) if m.kind == Kind::Diag => m
                .parse::<DiagPayload>()
                .map(|d| d.diagnostics)
                .map_err(|e| CheckError::RuntimeUnavailable(e.to_string())),
            Exchange::Reply(m) => Err(CheckError::RuntimeUnavailable(format!("unexpected {}", m.kind))),
            Exchange::Timeout => Err(CheckError::Timeout),
            Exchange::Closed => Err(CheckError::RuntimeUnavailable("runtime exited".into())),
        }
    }

    /// Runs the bundle's global skill once on `world`. Returns `Ok(None)`
    /// without any exchange when the bundle declares no global entry point.
    /// The reply must assign every worker exactly once.
    pub fn invoke_global(
        &self,
        bundle: &PolicyBundle,
        spec: &TaskSpec,
        world: &WorldState,
    ) -> Result<Option<Assignments>, GlobalError> {
        if bundle.manifest.entry_points.global.is_none() {
            return Ok(None);
        }
        let req = AssignRequest {
            bundle: Some(bundle.into()),
            spec: spec.clone(),
            world: world.clone(),
        };
        let reply = match self.exchange(Kind::AssignRequest, &req) {
            Exchange::Reply(m) => m,
            Exchange::Timeout => return Err(GlobalError::Timeout),
            Exchange::Closed => return Err(GlobalError::Unavailable("runtime exited".into())),
        };
        match reply.kind {
            Kind::AssignReply => {
                let r: AssignReply = reply.parse().map_err(|e| GlobalError::InvalidAssignment(e.to_string()))?;
                validate_assignment(&r, &world.worker_ids()).map(Some)
            }
            Kind::Diag => {
                let d = reply.parse::<DiagPayload>().map(|d| d.diagnostics).unwrap_or_default();
                if let [only] = d.as_slice() {
                    if only.kind == DiagnosticKind::InvalidAssignment {
                        return Err(GlobalError::InvalidAssignment(only.message.clone()));
                    }
                }
                Err(GlobalError::Diagnostics(d))
            }
            other => Err(GlobalError::InvalidAssignment(format!("unexpected {other}"))),
        }
    }

    pub fn transcript(&self) -> Transcript {
        let inner = self.inner.lock().expect("runtime lock");
        inner.link.as_ref().map(|l| l.transcript.clone()).unwrap_or_default()
    }

    pub fn shutdown(&self) {
        let mut inner = self.inner.lock().expect("runtime lock");
        inner.seq += 1;
        let seq = inner.seq;
        if let Some(mut link) = inner.link.take() {
            let _ = link.send(&Message::new(Kind::Shutdown, seq, &Empty {}));
            link.close(Duration::from_millis(500));
        }
    }
}

impl Drop for LocalRuntime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl CodeChecker for LocalRuntime {
    fn check(&self, bundle: &PolicyBundle) -> Result<Vec<Diagnostic>, CheckError> {
        self.check_code(bundle)
    }
}

/// Every worker id covered exactly once and nothing else.
pub fn validate_assignment(reply: &AssignReply, workers: &[u32]) -> Result<Assignments, GlobalError> {
    let mut map = Assignments::new();
    for (id, goal) in &reply.assignments {
        if !workers.contains(id) {
            return Err(GlobalError::InvalidAssignment(format!("unknown robot {id}")));
        }
        if map.insert(*id, goal.clone()).is_some() {
            return Err(GlobalError::InvalidAssignment(format!("robot {id} assigned twice")));
        }
    }
    let missing: Vec<String> = workers.iter().filter(|id| !map.contains_key(id)).map(u32::to_string).collect();
    if !missing.is_empty() {
        return Err(GlobalError::InvalidAssignment(format!("robots {} not assigned", missing.join(", "))));
    }
    Ok(map)
}
