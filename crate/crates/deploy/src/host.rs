//! Fan-out of provisioning, bundle pushes and tick exchanges to N nodes.
//!
//! Each node is driven by its own supervisor thread during fan-out
//! operations; node slots share no mutable state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use swarmgen_core::baselines::BaselineParams;
use swarmgen_core::bundle::{Diagnostic, PolicyBundle};
use swarmgen_core::world::{Observation, WorldState};
use swarmgen_core::{TaskSpec, Vec2};

use crate::launcher::Launcher;
use crate::link::{Link, Recv, Transcript};
use crate::plan::{DeployPlan, Step};
use crate::runtime::NodeFaults;
use crate::transport::{Address, Listener};
use crate::wire::{
    ActPayload, CheckRequest, DiagPayload, Empty, InitReply, InitRequest, InitStatus, Kind, Message,
};

/// Consecutive missed deadlines after which a node is declared failed.
pub const FAULT_LIMIT: u32 = 10;
/// Per-tick answer deadline at dt = 0.1 s.
pub const TICK_DEADLINE: Duration = Duration::from_millis(50);
pub const REGISTRY_FILE: &str = "registry.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Unprovisioned,
    Provisioned,
    Running,
    Failed,
    Stopped,
}

impl NodeState {
    /// Forward along unprovisioned, provisioned, running, stopped; failed from anywhere.
    pub fn can_become(self, next: NodeState) -> bool {
        use NodeState::*;
        matches!(
            (self, next),
            (_, Failed) | (Unprovisioned, Provisioned) | (Provisioned, Running) | (Running, Stopped) | (Provisioned, Stopped) | (Unprovisioned, Stopped)
        ) || self == next
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeState::Unprovisioned => "unprovisioned",
            NodeState::Provisioned => "provisioned",
            NodeState::Running => "running",
            NodeState::Failed => "failed",
            NodeState::Stopped => "stopped",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub id: u32,
    pub address: Address,
    pub state: NodeState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("node {node}: step {step} failed: {output}")]
pub struct StepFailure {
    pub node: u32,
    pub step: Step,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PushError {
    #[error("node {0} is not provisioned")]
    NotProvisioned(u32),
    #[error("transfer to node {node} failed: {message}")]
    Transfer { node: u32, message: String },
    #[error("node {node} received bundle {actual}, expected {expected}")]
    HashMismatch { node: u32, expected: String, actual: String },
}

/// Faults to inject per node id, for isolation tests.
#[derive(Debug, Clone, Default)]
pub struct FaultInjection {
    pub fail_step: BTreeMap<u32, Step>,
    pub corrupt_push: BTreeSet<u32>,
    pub runtime: BTreeMap<u32, NodeFaults>,
}

/// Result of one OBSERVE/ACT round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickResult {
    pub commands: BTreeMap<u32, Vec2>,
    /// Nodes that contributed a substituted zero command.
    pub substituted: Vec<u32>,
    /// Nodes that reached the fault limit during this round.
    pub newly_failed: Vec<u32>,
    /// DIAG records that arrived with the answers, by node.
    pub diagnostics: BTreeMap<u32, Vec<Diagnostic>>,
}

struct NodeSlot {
    desc: NodeDescriptor,
    dir: PathBuf,
    link: Option<Link>,
    /// Frames of links that have been closed.
    history: Transcript,
    next_seq: u64,
    consecutive_faults: u32,
    total_faults: u64,
    receipt: Option<String>,
}

impl NodeSlot {
    fn set_state(&mut self, next: NodeState) {
        debug_assert!(self.desc.state.can_become(next), "{} -> {next}", self.desc.state);
        self.desc.state = next;
    }

    fn seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    fn fail(&mut self) {
        if let Some(link) = self.link.take() {
            let t = link.kill();
            self.history.entries.extend(t.entries);
        }
        self.set_state(NodeState::Failed);
    }

    fn transcript(&self) -> Transcript {
        let mut t = self.history.clone();
        if let Some(l) = &self.link {
            t.entries.extend(l.transcript.entries.iter().cloned());
        }
        t
    }

    /// Sends a request and waits for the reply carrying the same sequence number.
    fn request(&mut self, kind: Kind, payload: &impl Serialize, timeout: Duration) -> Option<Message> {
        let seq = self.seq();
        let link = self.link.as_mut()?;
        link.send(&Message::new(kind, seq, payload)).ok()?;
        let deadline = Instant::now() + timeout;
        loop {
            match link.recv_until(deadline) {
                Recv::Frame(m) if m.seq == seq => return Some(m),
                Recv::Frame(_) => {}
                Recv::Timeout | Recv::Closed => return None,
            }
        }
    }
}

pub struct Deployment {
    root: PathBuf,
    plan: DeployPlan,
    launcher: Launcher,
    params: BaselineParams,
    pub faults: FaultInjection,
    pub tick_deadline: Duration,
    pub fault_limit: u32,
    nodes: Vec<NodeSlot>,
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Deterministic stand-in for an environment image: `kib` KiB of hash output.
fn write_image(path: &Path, kib: u64) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..kib * 32 {
        out.write_all(&Sha256::digest(i.to_be_bytes()))?;
    }
    out.flush()
}

impl Deployment {
    /// Nodes `0..count`, addressed by local sockets under `root`.
    pub fn new(root: impl Into<PathBuf>, count: u32, plan: DeployPlan, launcher: Launcher) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("sockets"))?;
        std::fs::create_dir_all(root.join("cache"))?;
        let nodes = (0..count)
            .map(|id| NodeSlot {
                desc: NodeDescriptor {
                    id,
                    address: Address::Unix(root.join("sockets").join(format!("node-{id}.sock"))),
                    state: NodeState::Unprovisioned,
                },
                dir: root.join("nodes").join(format!("node-{id}")),
                link: None,
                history: Transcript::default(),
                next_seq: 0,
                consecutive_faults: 0,
                total_faults: 0,
                receipt: None,
            })
            .collect();
        let d = Deployment {
            root,
            plan,
            launcher,
            params: BaselineParams::default(),
            faults: FaultInjection::default(),
            tick_deadline: TICK_DEADLINE,
            fault_limit: FAULT_LIMIT,
            nodes,
        };
        d.write_registry()?;
        Ok(d)
    }

    pub fn with_params(mut self, params: BaselineParams) -> Self {
        self.params = params;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn plan(&self) -> &DeployPlan {
        &self.plan
    }

    pub fn descriptors(&self) -> Vec<NodeDescriptor> {
        self.nodes.iter().map(|n| n.desc.clone()).collect()
    }

    pub fn state(&self, id: u32) -> Option<NodeState> {
        self.slot(id).map(|n| n.desc.state)
    }

    pub fn node_dir(&self, id: u32) -> Option<&Path> {
        self.slot(id).map(|n| n.dir.as_path())
    }

    pub fn running(&self) -> Vec<u32> {
        self.ids_in(NodeState::Running)
    }

    pub fn ids_in(&self, state: NodeState) -> Vec<u32> {
        self.nodes.iter().filter(|n| n.desc.state == state).map(|n| n.desc.id).collect()
    }

    /// Every frame exchanged with node `id`, in order.
    pub fn transcript(&self, id: u32) -> Option<Transcript> {
        self.slot(id).map(NodeSlot::transcript)
    }

    pub fn total_faults(&self, id: u32) -> Option<u64> {
        self.slot(id).map(|n| n.total_faults)
    }

    fn slot(&self, id: u32) -> Option<&NodeSlot> {
        self.nodes.iter().find(|n| n.desc.id == id)
    }

    /// Writes the node registry: id, address and state of every node.
    pub fn write_registry(&self) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Registry<'a> {
            node: &'a [NodeDescriptor],
        }
        let nodes = self.descriptors();
        let text = toml::to_string(&Registry { node: &nodes }).map_err(std::io::Error::other)?;
        std::fs::write(self.root.join(REGISTRY_FILE), text)
    }

    pub fn read_registry(root: &Path) -> Result<Vec<NodeDescriptor>, String> {
        #[derive(Deserialize)]
        struct Registry {
            #[serde(default)]
            node: Vec<NodeDescriptor>,
        }
        let text = std::fs::read_to_string(root.join(REGISTRY_FILE)).map_err(|e| e.to_string())?;
        toml::from_str::<Registry>(&text).map(|r| r.node).map_err(|e| e.to_string())
    }

    fn image_path(&self) -> PathBuf {
        self.root.join("cache").join(format!("environment-{}k.img", self.plan.image_kib))
    }

    /// Runs the provisioning steps on every unprovisioned node concurrently.
    /// Completed steps are skipped, so re-provisioning is a no-op.
    pub fn provision(&mut self) -> BTreeMap<u32, Result<(), StepFailure>> {
        let image = self.image_path();
        if !image.is_file() {
            if let Err(e) = write_image(&image, self.plan.image_kib) {
                return self
                    .nodes
                    .iter()
                    .map(|n| {
                        let f = StepFailure { node: n.desc.id, step: Step::PullEnvironmentImage, output: e.to_string() };
                        (n.desc.id, Err(f))
                    })
                    .collect();
            }
        }
        let image_hash = sha256_file(&image).unwrap_or_default();
        let plan = &self.plan;
        let fail_step = &self.faults.fail_step;
        let launcher = format!("{:?}", self.launcher);
        let results = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .nodes
                .iter_mut()
                .map(|slot| {
                    let image = &image;
                    let image_hash = &image_hash;
                    let launcher = &launcher;
                    s.spawn(move || {
                        let id = slot.desc.id;
                        if slot.desc.state != NodeState::Unprovisioned {
                            return (id, Ok(()));
                        }
                        for step in Step::ALL.into_iter().filter(|s| s.is_provisioning()) {
                            let cfg = plan.step(step);
                            let started = Instant::now();
                            let out = if fail_step.get(&id) == Some(&step) {
                                Err("injected failure".to_string())
                            } else {
                                run_provision_step(&slot.dir, step, cfg.latency(), image, image_hash, launcher)
                            };
                            let out = out.and_then(|()| {
                                if started.elapsed() > cfg.timeout() {
                                    Err(format!("timed out after {} ms", cfg.timeout_ms))
                                } else {
                                    Ok(())
                                }
                            });
                            if let Err(output) = out {
                                slot.set_state(NodeState::Failed);
                                return (id, Err(StepFailure { node: id, step, output }));
                            }
                        }
                        slot.set_state(NodeState::Provisioned);
                        (id, Ok(()))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("provision thread")).collect()
        });
        let _ = self.write_registry();
        results
    }

    /// Transfers the bundle to every provisioned or running node
    /// concurrently. A node keeps its previous bundle if the transfer fails.
    pub fn push_bundle(&mut self, bundle: &PolicyBundle) -> BTreeMap<u32, Result<String, PushError>> {
        let corrupt = &self.faults.corrupt_push;
        let latency = self.plan.step(Step::PushBundle).latency();
        let results = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .nodes
                .iter_mut()
                .filter(|n| n.desc.state != NodeState::Failed && n.desc.state != NodeState::Stopped)
                .map(|slot| {
                    s.spawn(move || {
                        let id = slot.desc.id;
                        if slot.desc.state == NodeState::Unprovisioned {
                            return (id, Err(PushError::NotProvisioned(id)));
                        }
                        let r = push_one(&slot.dir, id, bundle, corrupt.contains(&id), latency);
                        match &r {
                            Ok(h) => slot.receipt = Some(h.clone()),
                            Err(_) => slot.set_state(NodeState::Failed),
                        }
                        (id, r)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("push thread")).collect()
        });
        let _ = self.write_registry();
        results
    }

    /// Launches a runtime on every provisioned node holding a bundle, then
    /// health-checks it with a CHECK round trip. Nodes that do not come up
    /// are marked failed.
    pub fn start(&mut self) -> BTreeMap<u32, Result<(), StepFailure>> {
        let params_path = self.root.join("cache").join("baseline-params.toml");
        if let Err(e) = std::fs::write(&params_path, self.params.to_toml_string()) {
            return self
                .nodes
                .iter()
                .map(|n| (n.desc.id, Err(StepFailure { node: n.desc.id, step: Step::Start, output: e.to_string() })))
                .collect();
        }
        let start_cfg = *self.plan.step(Step::Start);
        let health_cfg = *self.plan.step(Step::Healthcheck);
        let launcher = &self.launcher;
        let faults = &self.faults.runtime;
        let params_path = &params_path;
        let results = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .nodes
                .iter_mut()
                .filter(|n| n.desc.state == NodeState::Provisioned && n.receipt.is_some())
                .map(|slot| {
                    s.spawn(move || {
                        let id = slot.desc.id;
                        let fail = |slot: &mut NodeSlot, step, output: String| {
                            slot.fail();
                            (id, Err(StepFailure { node: id, step, output }))
                        };
                        let node_faults = faults.get(&id).cloned().unwrap_or_default();
                        let link = start_one(slot, launcher, params_path, &node_faults, start_cfg.timeout());
                        match link {
                            Ok(link) => slot.link = Some(link),
                            Err(e) => return fail(slot, Step::Start, e),
                        }
                        slot.set_state(NodeState::Running);
                        match slot.request(Kind::Check, &CheckRequest::default(), health_cfg.timeout()) {
                            Some(m) if m.kind == Kind::Diag => match m.parse::<DiagPayload>() {
                                Ok(d) if d.diagnostics.is_empty() => (id, Ok(())),
                                Ok(d) => {
                                    let text: Vec<String> = d.diagnostics.iter().map(ToString::to_string).collect();
                                    fail(slot, Step::Healthcheck, text.join("; "))
                                }
                                Err(e) => fail(slot, Step::Healthcheck, e.to_string()),
                            },
                            Some(m) => fail(slot, Step::Healthcheck, format!("unexpected {}", m.kind)),
                            None => fail(slot, Step::Healthcheck, "no answer to CHECK".into()),
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("start thread")).collect()
        });
        let _ = self.write_registry();
        results
    }

    /// Provision, push and start in one call; the first failure per node is reported.
    pub fn deploy(&mut self, bundle: &PolicyBundle) -> BTreeMap<u32, Result<(), String>> {
        let mut out: BTreeMap<u32, Result<(), String>> = BTreeMap::new();
        for (id, r) in self.provision() {
            out.insert(id, r.map_err(|e| e.to_string()));
        }
        for (id, r) in self.push_bundle(bundle) {
            if out.get(&id).map_or(true, Result::is_ok) {
                out.insert(id, r.map(|_| ()).map_err(|e| e.to_string()));
            }
        }
        for (id, r) in self.start() {
            if out.get(&id).map_or(true, Result::is_ok) {
                out.insert(id, r.map_err(|e| e.to_string()));
            }
        }
        out
    }

    /// INIT handshake with every running node for a new trial. Nodes that do
    /// not answer ready are marked failed and returned.
    pub fn init_trial(&mut self, spec: &TaskSpec, world: &WorldState) -> Vec<u32> {
        let timeout = self.plan.step(Step::Healthcheck).timeout();
        let failed = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .nodes
                .iter_mut()
                .filter(|n| n.desc.state == NodeState::Running)
                .map(|slot| {
                    s.spawn(move || {
                        slot.consecutive_faults = 0;
                        let req = InitRequest {
                            robot_id: slot.desc.id,
                            bundle_hash: slot.receipt.clone().unwrap_or_default(),
                            spec: spec.clone(),
                            world: world.clone(),
                        };
                        let ok = slot
                            .request(Kind::Init, &req, timeout)
                            .and_then(|m| m.parse::<InitReply>().ok())
                            .is_some_and(|r| r.status == InitStatus::Ready && r.robot_id == slot.desc.id);
                        if !ok {
                            slot.fail();
                        }
                        (!ok).then_some(slot.desc.id)
                    })
                })
                .collect();
            handles.into_iter().filter_map(|h| h.join().expect("init thread")).collect()
        });
        let _ = self.write_registry();
        failed
    }

    /// One OBSERVE/ACT round. Every node with an observation gets an
    /// OBSERVE; a node that does not answer by the deadline contributes a
    /// zero command and a fault. Observations for robots without a running
    /// node also get a zero command.
    pub fn tick_exchange(&mut self, observations: &BTreeMap<u32, Observation>) -> TickResult {
        let mut result = TickResult::default();
        let mut pending = Vec::new();
        for slot in &mut self.nodes {
            let id = slot.desc.id;
            let Some(obs) = observations.get(&id) else { continue };
            if slot.desc.state != NodeState::Running {
                continue;
            }
            let seq = slot.seq();
            let sent = slot.link.as_mut().is_some_and(|l| l.send(&Message::new(Kind::Observe, seq, obs)).is_ok());
            pending.push((id, seq, sent));
        }
        let deadline = Instant::now() + self.tick_deadline;
        for (id, seq, sent) in pending {
            let slot = self.nodes.iter_mut().find(|n| n.desc.id == id).expect("known node");
            let mut answer = None;
            if sent {
                let link = slot.link.as_mut().expect("running node has a link");
                loop {
                    match link.recv_until(deadline) {
                        Recv::Frame(m) if m.seq < seq => {}
                        Recv::Frame(m) if m.kind == Kind::Diag && m.seq == seq => {
                            if let Ok(d) = m.parse::<DiagPayload>() {
                                result.diagnostics.entry(id).or_default().extend(d.diagnostics);
                            }
                        }
                        Recv::Frame(m) if m.kind == Kind::Act && m.seq == seq => {
                            answer = m.parse::<ActPayload>().ok().map(|a| a.velocity);
                            break;
                        }
                        Recv::Frame(_) => {}
                        Recv::Timeout | Recv::Closed => break,
                    }
                }
            }
            match answer {
                Some(v) => {
                    slot.consecutive_faults = 0;
                    result.commands.insert(id, v);
                }
                None => {
                    slot.consecutive_faults += 1;
                    slot.total_faults += 1;
                    result.substituted.push(id);
                    result.commands.insert(id, Vec2::ZERO);
                    if slot.consecutive_faults >= self.fault_limit {
                        slot.fail();
                        result.newly_failed.push(id);
                    }
                }
            }
        }
        for id in observations.keys() {
            result.commands.entry(*id).or_insert(Vec2::ZERO);
        }
        if !result.newly_failed.is_empty() {
            let _ = self.write_registry();
        }
        result
    }

    /// CHECK round trip with one running node.
    pub fn check_code(&mut self, id: u32, bundle: Option<&PolicyBundle>) -> Option<Vec<Diagnostic>> {
        let timeout = self.plan.step(Step::Healthcheck).timeout();
        let slot = self.nodes.iter_mut().find(|n| n.desc.id == id && n.desc.state == NodeState::Running)?;
        let req = CheckRequest { bundle: bundle.map(Into::into) };
        let reply = slot.request(Kind::Check, &req, timeout)?;
        reply.parse::<DiagPayload>().ok().map(|d| d.diagnostics)
    }

    /// Sends SHUTDOWN to running nodes and reaps them. Nodes that do not exit
    /// within the plan's grace period are killed and marked failed. Safe to
    /// call repeatedly.
    pub fn teardown(&mut self) -> BTreeMap<u32, NodeState> {
        let grace = self.plan.grace();
        std::thread::scope(|s| {
            for slot in self.nodes.iter_mut() {
                s.spawn(move || {
                    match slot.desc.state {
                        NodeState::Running => {
                            let seq = slot.seq();
                            let mut link = slot.link.take().expect("running node has a link");
                            let _ = link.send(&Message::new(Kind::Shutdown, seq, &Empty {}));
                            let (clean, t) = link.close(grace);
                            slot.history.entries.extend(t.entries);
                            slot.set_state(if clean { NodeState::Stopped } else { NodeState::Failed });
                        }
                        NodeState::Unprovisioned | NodeState::Provisioned => slot.set_state(NodeState::Stopped),
                        NodeState::Failed | NodeState::Stopped => {}
                    }
                });
            }
        });
        let _ = self.write_registry();
        self.nodes.iter().map(|n| (n.desc.id, n.desc.state)).collect()
    }

    /// SHA-256 over every file a node holds, for idempotence checks.
    pub fn node_checksum(&self, id: u32) -> Option<String> {
        let dir = &self.slot(id)?.dir;
        let mut h = Sha256::new();
        for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.ok()?;
            let rel = entry.path().strip_prefix(dir).ok()?;
            h.update(rel.to_string_lossy().as_bytes());
            if entry.file_type().is_file() {
                h.update(std::fs::read(entry.path()).ok()?);
            }
        }
        Some(hex::encode(h.finalize()))
    }
}

impl Drop for Deployment {
    fn drop(&mut self) {
        for slot in &mut self.nodes {
            if let Some(link) = slot.link.take() {
                link.kill();
            }
        }
    }
}

/// Marker recording that `step` completed with the given fingerprint.
fn marker(dir: &Path, step: Step) -> PathBuf {
    dir.join("state").join(format!("{step}.done"))
}

fn run_provision_step(
    dir: &Path,
    step: Step,
    latency: Duration,
    image: &Path,
    image_hash: &str,
    launcher: &str,
) -> Result<(), String> {
    let fingerprint = match step {
        Step::EnsureDirectories => "layout-v1".to_string(),
        Step::InstallRuntime => format!("runtime {} {launcher}", env!("CARGO_PKG_VERSION")),
        Step::PullEnvironmentImage => image_hash.to_string(),
        _ => unreachable!("not a provisioning step"),
    };
    let mark = marker(dir, step);
    if std::fs::read_to_string(&mark).is_ok_and(|m| m == fingerprint) {
        return Ok(());
    }
    std::thread::sleep(latency);
    let err = |e: std::io::Error| e.to_string();
    match step {
        Step::EnsureDirectories => {
            for sub in ["state", "runtime", "env", "logs"] {
                std::fs::create_dir_all(dir.join(sub)).map_err(err)?;
            }
        }
        Step::InstallRuntime => {
            std::fs::write(dir.join("runtime").join("RUNTIME"), &fingerprint).map_err(err)?;
        }
        Step::PullEnvironmentImage => {
            let dest = dir.join("env").join("environment.img");
            std::fs::copy(image, &dest).map_err(err)?;
            let got = sha256_file(&dest).map_err(err)?;
            if got != image_hash {
                return Err(format!("image checksum {got} does not match {image_hash}"));
            }
        }
        _ => unreachable!(),
    }
    std::fs::write(mark, fingerprint).map_err(err)
}

fn push_one(dir: &Path, id: u32, bundle: &PolicyBundle, corrupt: bool, latency: Duration) -> Result<String, PushError> {
    let transfer = |e: &dyn fmt::Display| PushError::Transfer { node: id, message: e.to_string() };
    let live = dir.join("bundle");
    if !corrupt {
        if let Ok(existing) = PolicyBundle::read_from(&live) {
            if existing.hash() == bundle.hash() {
                return Ok(existing.hash().to_string());
            }
        }
    }
    std::thread::sleep(latency);
    let staging = dir.join(format!("bundle.{}.partial", &bundle.hash()[..12]));
    let _ = std::fs::remove_dir_all(&staging);
    bundle.write_to(&staging).map_err(|e| transfer(&e))?;
    if corrupt {
        let victim = staging.join(bundle.files.keys().next().map_or("manifest.toml", String::as_str));
        let mut bytes = std::fs::read(&victim).map_err(|e| transfer(&e))?;
        if let Some(b) = bytes.first_mut() {
            *b ^= 0x20;
        } else {
            bytes.push(b'#');
        }
        std::fs::write(&victim, bytes).map_err(|e| transfer(&e))?;
    }
    let received = match PolicyBundle::read_from(&staging) {
        Ok(b) => b.hash().to_string(),
        Err(swarmgen_core::bundle::BundleError::HashMismatch { actual, .. }) => {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(PushError::HashMismatch {
                node: id,
                expected: bundle.hash().to_string(),
                actual,
            });
        }
        Err(e) => return Err(transfer(&e)),
    };
    let old = dir.join("bundle.old");
    let _ = std::fs::remove_dir_all(&old);
    if live.exists() {
        std::fs::rename(&live, &old).map_err(|e| transfer(&e))?;
    }
    std::fs::rename(&staging, &live).map_err(|e| transfer(&e))?;
    let _ = std::fs::remove_dir_all(&old);
    Ok(received)
}

fn start_one(
    slot: &mut NodeSlot,
    launcher: &Launcher,
    params: &Path,
    faults: &NodeFaults,
    timeout: Duration,
) -> Result<Link, String> {
    let listener = Listener::bind(&slot.desc.address).map_err(|e| format!("bind {}: {e}", slot.desc.address))?;
    let log = slot.dir.join("logs").join("runtime.log");
    let pending = launcher
        .spawn_node(&slot.dir.join("bundle"), slot.desc.id, &slot.desc.address, params, faults, &log)
        .map_err(|e| format!("launch: {e}"))?;
    match listener.accept_timeout(timeout) {
        Ok(conn) => pending.attach(conn).map_err(|e| e.to_string()),
        Err(e) => {
            pending.abandon();
            Err(format!("runtime did not connect: {e}"))
        }
    }
}
