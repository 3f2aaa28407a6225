//! Command line of the policy runtime: `check`, `global`, `serve`, `stdio`.
//!
//! Exit codes: 0 ok, 1 diagnostics reported, 2 usage or bundle error,
//! 3 transport error, 70 injected crash.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};

use swarmgen_core::baselines::BaselineParams;
use swarmgen_core::bundle::{check_bundle, PolicyBundle};

use crate::runtime::{self, NodeFaults, PolicyRuntime, RuntimeError};
use crate::transport::Address;
use crate::wire::{self, DiagPayload, Kind, Message};

#[derive(Debug, Parser)]
#[command(name = "swarmgen-node", about = "Per-robot policy runtime")]
pub struct NodeArgs {
    #[command(subcommand)]
    pub command: NodeCommand,
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    /// Parse the bundle's code without running it; print DIAG records.
    Check { bundle: PathBuf },
    /// Read one framed ASSIGN_REQUEST on stdin, write the reply on stdout.
    Global {
        bundle: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Connect to the host and serve one robot until SHUTDOWN.
    Serve {
        bundle: PathBuf,
        #[arg(long)]
        id: u32,
        #[arg(long)]
        connect: Address,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        crash_at: Option<u64>,
        #[arg(long)]
        hang_at: Option<u64>,
        #[arg(long)]
        raise: bool,
        #[arg(long)]
        drop_assignment: bool,
        #[arg(long)]
        delay_ms: Option<u64>,
    },
    /// Serve CHECK and ASSIGN_REQUEST with inline bundles over stdin/stdout.
    Stdio {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        drop_assignment: bool,
    },
}

fn load_params(path: Option<&Path>) -> Result<BaselineParams, String> {
    path.map_or(Ok(BaselineParams::default()), |p| BaselineParams::load(p).map_err(|e| e.to_string()))
}

fn load_bundle(path: &Path) -> Result<PolicyBundle, String> {
    PolicyBundle::read_from(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs the runtime command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match NodeArgs::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(args.command) {
        Ok(code) => code,
        Err((code, message)) => {
            eprintln!("swarmgen-node: {message}");
            code
        }
    }
}

fn execute(cmd: NodeCommand) -> Result<i32, (i32, String)> {
    let usage = |m: String| (2, m);
    match cmd {
        NodeCommand::Check { bundle } => {
            let diagnostics = match PolicyBundle::read_from(&bundle) {
                Ok(b) => check_bundle(&b),
                Err(e) => vec![swarmgen_core::bundle::Diagnostic {
                    kind: swarmgen_core::bundle::DiagnosticKind::Manifest,
                    file: None,
                    line: None,
                    message: e.to_string(),
                }],
            };
            if diagnostics.is_empty() {
                return Ok(0);
            }
            let msg = Message::new(Kind::Diag, 0, &DiagPayload { diagnostics });
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(&msg.encode());
            let _ = out.write_all(b"\n");
            Ok(1)
        }
        NodeCommand::Global { bundle, params } => {
            let bundle = load_bundle(&bundle).map_err(usage)?;
            let params = load_params(params.as_deref()).map_err(usage)?;
            let mut stdin = std::io::stdin().lock();
            let req = wire::recv(&mut stdin)
                .map_err(|e| (3, e.to_string()))?
                .ok_or((3, "no request on stdin".to_string()))?;
            if req.kind != Kind::AssignRequest {
                return Err((2, format!("expected ASSIGN_REQUEST, got {}", req.kind)));
            }
            let mut rt = PolicyRuntime::new(Some(bundle), params, NodeFaults::default());
            let (replies, _) = rt.handle(&req);
            let mut out = std::io::stdout().lock();
            let mut code = 0;
            for r in &replies {
                if r.kind == Kind::Diag {
                    code = 1;
                }
                wire::send(&mut out, r).map_err(|e| (3, e.to_string()))?;
            }
            Ok(code)
        }
        NodeCommand::Serve {
            bundle,
            id,
            connect,
            params,
            crash_at,
            hang_at,
            raise,
            drop_assignment,
            delay_ms,
        } => {
            let params = load_params(params.as_deref()).map_err(usage)?;
            let faults = NodeFaults {
                crash_at,
                hang_at,
                raise,
                drop_assignment,
                delay: delay_ms.map(Duration::from_millis),
            };
            match runtime::serve_node(&bundle, id, &connect, params, faults) {
                Ok(()) => Ok(0),
                Err(RuntimeError::Crashed) => Err((70, "injected crash".into())),
                Err(RuntimeError::Bundle(e)) => Err((2, e.to_string())),
                Err(e) => Err((3, e.to_string())),
            }
        }
        NodeCommand::Stdio { params, drop_assignment } => {
            let params = load_params(params.as_deref()).map_err(usage)?;
            let faults = NodeFaults { drop_assignment, ..Default::default() };
            let mut rt = PolicyRuntime::new(None, params, faults);
            let mut r = std::io::stdin().lock();
            let mut w = std::io::stdout().lock();
            runtime::serve(&mut r, &mut w, &mut rt).map_err(|e| (3, e.to_string()))?;
            Ok(0)
        }
    }
}
