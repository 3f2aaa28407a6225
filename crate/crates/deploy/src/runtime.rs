//! Node-side policy runtime: answers INIT, OBSERVE, ASSIGN_REQUEST, CHECK
//! and SHUTDOWN for one robot.
//!
//! Python code units are checked but not executed. The controller behind
//! ACT is the bundle's expert equivalent, built with the parameters the code
//! declares.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use swarmgen_core::baselines::{BaselineParams, ExpertPolicy};
use swarmgen_core::bundle::{check_bundle, BundleError, Diagnostic, DiagnosticKind, PolicyBundle};
use swarmgen_core::trial::{Assignments, Controller};
use swarmgen_core::world::Observation;
use swarmgen_core::Vec2;

use crate::transport::{Address, Conn};
use crate::wire::{
    self, ActPayload, AssignReply, AssignRequest, CheckRequest, DiagPayload, InitReply, InitRequest, InitStatus, Kind,
    Message, WireError,
};

/// Behavior injected into a node for failure testing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeFaults {
    /// Exit without answering the OBSERVE for this tick.
    pub crash_at: Option<u64>,
    /// Stop answering anything from the OBSERVE for this tick on.
    pub hang_at: Option<u64>,
    /// Every OBSERVE yields DIAG(code_bug) and ACT(0,0).
    pub raise: bool,
    /// The global reply omits the highest robot id.
    pub drop_assignment: bool,
    /// Sleep this long before each ACT.
    pub delay: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
    Crash,
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("injected crash")]
    Crashed,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

pub struct PolicyRuntime {
    bundle: Option<PolicyBundle>,
    params: BaselineParams,
    faults: NodeFaults,
    robot_id: Option<u32>,
    expected_id: Option<u32>,
    controller: Option<ExpertPolicy>,
    hung: bool,
}

fn diag(kind: DiagnosticKind, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        kind,
        file: None,
        line: None,
        message: message.into(),
    }
}

fn diag_msg(seq: u64, diagnostics: Vec<Diagnostic>) -> Message {
    Message::new(Kind::Diag, seq, &DiagPayload { diagnostics })
}

fn zero_act(seq: u64) -> Message {
    Message::new(Kind::Act, seq, &ActPayload { velocity: Vec2::ZERO })
}

impl PolicyRuntime {
    pub fn new(bundle: Option<PolicyBundle>, params: BaselineParams, faults: NodeFaults) -> Self {
        PolicyRuntime {
            bundle,
            params,
            faults,
            robot_id: None,
            expected_id: None,
            controller: None,
            hung: false,
        }
    }

    /// Rejects INIT for any other robot.
    pub fn for_robot(mut self, id: u32) -> Self {
        self.expected_id = Some(id);
        self
    }

    pub fn is_hung(&self) -> bool {
        self.hung
    }

    /// Replies to one inbound message, in the order they must be sent.
    pub fn handle(&mut self, msg: &Message) -> (Vec<Message>, Flow) {
        if self.hung {
            return (Vec::new(), Flow::Continue);
        }
        let seq = msg.seq;
        match msg.kind {
            Kind::Init => (vec![self.init(msg)], Flow::Continue),
            Kind::Observe => {
                let obs: Observation = match msg.parse() {
                    Ok(o) => o,
                    Err(e) => return (vec![diag_msg(seq, vec![diag(DiagnosticKind::Protocol, e.to_string())]), zero_act(seq)], Flow::Continue),
                };
                if self.faults.crash_at == Some(obs.tick) {
                    return (Vec::new(), Flow::Crash);
                }
                if self.faults.hang_at.is_some_and(|t| obs.tick >= t) {
                    self.hung = true;
                    return (Vec::new(), Flow::Continue);
                }
                if let Some(d) = self.faults.delay {
                    std::thread::sleep(d);
                }
                (self.act(seq, &obs), Flow::Continue)
            }
            Kind::AssignRequest => (vec![self.assign(msg)], Flow::Continue),
            Kind::Check => (vec![self.check(msg)], Flow::Continue),
            Kind::Shutdown => (Vec::new(), Flow::Stop),
            other => {
                let d = diag(DiagnosticKind::Protocol, format!("{other} is not a request"));
                (vec![diag_msg(seq, vec![d])], Flow::Continue)
            }
        }
    }

    fn init(&mut self, msg: &Message) -> Message {
        let reply = |robot_id, bundle_hash: String, status| {
            Message::new(Kind::Init, msg.seq, &InitReply { robot_id, bundle_hash, status })
        };
        let req: InitRequest = match msg.parse() {
            Ok(r) => r,
            Err(_) => return reply(u32::MAX, String::new(), InitStatus::Rejected),
        };
        let Some(bundle) = &self.bundle else {
            return reply(req.robot_id, String::new(), InitStatus::Rejected);
        };
        if self.expected_id.is_some_and(|id| id != req.robot_id) {
            return reply(req.robot_id, bundle.hash().to_string(), InitStatus::Rejected);
        }
        let hash = bundle.hash().to_string();
        if hash != req.bundle_hash {
            return reply(req.robot_id, hash, InitStatus::HashMismatch);
        }
        // Rebuild the controller's per-trial plan from the same snapshot the
        // host used, so local decisions agree with the global assignment.
        let mut controller = bundle.expert_equivalent(self.params);
        if controller.global_step(&req.world, &req.spec).is_err() {
            return reply(req.robot_id, hash, InitStatus::Rejected);
        }
        self.controller = Some(controller);
        self.robot_id = Some(req.robot_id);
        reply(req.robot_id, hash, InitStatus::Ready)
    }

    fn act(&mut self, seq: u64, obs: &Observation) -> Vec<Message> {
        if self.faults.raise {
            let trace = "Traceback (most recent call last):\n  File \"local.py\", in local_policy\nRuntimeError: injected fault";
            let mut d = diag(DiagnosticKind::CodeBug, trace);
            d.file = Some(swarmgen_core::bundle::LOCAL_FILE.into());
            return vec![diag_msg(seq, vec![d]), zero_act(seq)];
        }
        let (Some(controller), Some(id)) = (self.controller.as_mut(), self.robot_id) else {
            return vec![diag_msg(seq, vec![diag(DiagnosticKind::Protocol, "OBSERVE before INIT")]), zero_act(seq)];
        };
        if obs.self_state.id != id {
            let d = diag(DiagnosticKind::Protocol, format!("observation for robot {} sent to node {id}", obs.self_state.id));
            return vec![diag_msg(seq, vec![d]), zero_act(seq)];
        }
        match controller.act(std::slice::from_ref(obs)) {
            Ok(cmds) => {
                let v = cmds.get(&id).copied().unwrap_or(Vec2::ZERO);
                vec![Message::new(Kind::Act, seq, &ActPayload { velocity: v })]
            }
            Err(e) => vec![diag_msg(seq, vec![diag(DiagnosticKind::CodeBug, e.to_string())]), zero_act(seq)],
        }
    }

    fn assign(&mut self, msg: &Message) -> Message {
        let fail = |m: String| diag_msg(msg.seq, vec![diag(DiagnosticKind::InvalidAssignment, m)]);
        let req: AssignRequest = match msg.parse() {
            Ok(r) => r,
            Err(e) => return diag_msg(msg.seq, vec![diag(DiagnosticKind::Protocol, e.to_string())]),
        };
        let bundle = match (req.bundle, &self.bundle) {
            (Some(b), _) => PolicyBundle::from(b),
            (None, Some(b)) => b.clone(),
            (None, None) => return fail("no bundle to run".into()),
        };
        if bundle.manifest.entry_points.global.is_none() {
            return fail("bundle declares no global entry point".into());
        }
        let mut controller = bundle.expert_equivalent(self.params);
        let mut map = match controller.global_step(&req.world, &req.spec) {
            Ok(m) => m.unwrap_or_default(),
            Err(e) => return diag_msg(msg.seq, vec![diag(DiagnosticKind::CodeBug, e.to_string())]),
        };
        if self.faults.drop_assignment {
            map.pop_last();
        }
        Message::new(Kind::AssignReply, msg.seq, &AssignReply::from_map(&map))
    }

    fn check(&self, msg: &Message) -> Message {
        let req: CheckRequest = msg.parse().unwrap_or_default();
        let diagnostics = match (req.bundle, &self.bundle) {
            (Some(b), _) => check_bundle(&b.into()),
            (None, Some(b)) => check_bundle(b),
            (None, None) => vec![diag(DiagnosticKind::Manifest, "no bundle to check")],
        };
        diag_msg(msg.seq, diagnostics)
    }
}

/// Serves requests until SHUTDOWN or a clean close. A hung runtime keeps
/// draining input silently until the peer closes.
pub fn serve(reader: &mut impl Read, writer: &mut impl Write, runtime: &mut PolicyRuntime) -> Result<(), RuntimeError> {
    while let Some(msg) = wire::recv(reader)? {
        let (replies, flow) = runtime.handle(&msg);
        for r in &replies {
            wire::send(writer, r).map_err(WireError::from)?;
        }
        match flow {
            Flow::Continue => {}
            Flow::Stop => return Ok(()),
            Flow::Crash => return Err(RuntimeError::Crashed),
        }
    }
    Ok(())
}

/// Connects to the host at `addr` and serves one robot.
pub fn serve_node(
    bundle_dir: &Path,
    robot_id: u32,
    addr: &Address,
    params: BaselineParams,
    faults: NodeFaults,
) -> Result<(), RuntimeError> {
    let bundle = PolicyBundle::read_from(bundle_dir)?;
    let conn = Conn::connect_retry(addr, Duration::from_secs(5)).map_err(WireError::from)?;
    let mut reader = conn.try_clone().map_err(WireError::from)?;
    let mut writer = conn;
    let mut runtime = PolicyRuntime::new(Some(bundle), params, faults).for_robot(robot_id);
    serve(&mut reader, &mut writer, &mut runtime)
}

/// Global allocation run locally, without a wire exchange.
pub fn run_global(bundle: &PolicyBundle, params: BaselineParams, req: AssignRequest) -> Result<Assignments, Vec<Diagnostic>> {
    let mut rt = PolicyRuntime::new(Some(bundle.clone()), params, NodeFaults::default());
    let reply = rt.assign(&Message::new(Kind::AssignRequest, 0, &req));
    match reply.kind {
        Kind::AssignReply => {
            let r: AssignReply = reply.parse().map_err(|e| vec![diag(DiagnosticKind::Protocol, e.to_string())])?;
            Ok(r.assignments.into_iter().collect())
        }
        _ => Err(reply.parse::<DiagPayload>().map(|d| d.diagnostics).unwrap_or_default()),
    }
}
