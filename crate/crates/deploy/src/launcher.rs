//! Starting policy runtimes: as child processes or as threads of this process.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use swarmgen_core::baselines::BaselineParams;

use crate::link::{Link, Peer};
use crate::runtime::{self, NodeFaults, PolicyRuntime};
use crate::transport::{Address, Conn};

pub const NODE_BIN: &str = "swarmgen-node";
pub const NODE_BIN_ENV: &str = "SWARMGEN_NODE_BIN";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Launcher {
    /// `program [prefix...] serve <bundle> --id <n> --connect <addr>`; the
    /// same command line a Python runtime would accept.
    Process { program: PathBuf, prefix: Vec<String> },
    /// The native runtime on a thread of this process.
    Thread,
}

impl Launcher {
    pub fn process(program: impl Into<PathBuf>) -> Self {
        Launcher::Process {
            program: program.into(),
            prefix: Vec::new(),
        }
    }

    /// `$SWARMGEN_NODE_BIN`, else a `swarmgen-node` next to the current
    /// executable, else in-process threads.
    pub fn detect() -> Self {
        if let Some(p) = std::env::var_os(NODE_BIN_ENV) {
            return Launcher::process(p);
        }
        let sibling = std::env::current_exe()
            .ok()
            .and_then(|exe| exe.parent().map(|d| d.join(NODE_BIN)))
            .filter(|p| p.is_file());
        match sibling {
            Some(p) => Launcher::process(p),
            None => Launcher::Thread,
        }
    }

    fn command(program: &Path, prefix: &[String]) -> Command {
        let mut cmd = Command::new(program);
        cmd.args(prefix);
        cmd
    }

    /// Starts a node that will connect back to `addr`. The returned peer
    /// still needs its connection accepted by the caller.
    pub fn spawn_node(
        &self,
        bundle_dir: &Path,
        robot_id: u32,
        addr: &Address,
        params: &Path,
        faults: &NodeFaults,
        log: &Path,
    ) -> std::io::Result<PendingPeer> {
        match self {
            Launcher::Process { program, prefix } => {
                let mut cmd = Self::command(program, prefix);
                cmd.arg("serve")
                    .arg(bundle_dir)
                    .arg("--id")
                    .arg(robot_id.to_string())
                    .arg("--connect")
                    .arg(addr.to_string())
                    .arg("--params")
                    .arg(params);
                if let Some(t) = faults.crash_at {
                    cmd.arg("--crash-at").arg(t.to_string());
                }
                if let Some(t) = faults.hang_at {
                    cmd.arg("--hang-at").arg(t.to_string());
                }
                if faults.raise {
                    cmd.arg("--raise");
                }
                if faults.drop_assignment {
                    cmd.arg("--drop-assignment");
                }
                if let Some(d) = faults.delay {
                    cmd.arg("--delay-ms").arg(d.as_millis().to_string());
                }
                let child = cmd
                    .stdin(Stdio::null())
                    .stdout(Stdio::null())
                    .stderr(File::create(log)?)
                    .spawn()?;
                Ok(PendingPeer::Child(child))
            }
            Launcher::Thread => {
                let bundle_dir = bundle_dir.to_path_buf();
                let addr = addr.clone();
                let faults = faults.clone();
                let params = BaselineParams::load(params).unwrap_or_default();
                let join = std::thread::spawn(move || runtime::serve_node(&bundle_dir, robot_id, &addr, params, faults));
                Ok(PendingPeer::Thread(join))
            }
        }
    }

    /// A bundle-agnostic runtime for CHECK and ASSIGN_REQUEST, spoken to over
    /// standard input and output. The temporary directory holds the
    /// parameter file and must outlive the link.
    pub fn spawn_local(
        &self,
        params: BaselineParams,
        faults: &NodeFaults,
    ) -> std::io::Result<(Link, Option<tempfile::TempDir>)> {
        match self {
            Launcher::Process { program, prefix } => {
                let dir = tempfile::tempdir()?;
                let params_path = dir.path().join("params.toml");
                std::fs::write(&params_path, params.to_toml_string())?;
                let mut cmd = Self::command(program, prefix);
                cmd.arg("stdio").arg("--params").arg(&params_path);
                if faults.drop_assignment {
                    cmd.arg("--drop-assignment");
                }
                let mut child = cmd
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok((Link::new(stdout, stdin, Peer::Child(child)), Some(dir)))
            }
            Launcher::Thread => {
                let (host, node) = std::os::unix::net::UnixStream::pair()?;
                let faults = faults.clone();
                let join = std::thread::spawn(move || {
                    let mut rt = PolicyRuntime::new(None, params, faults);
                    let mut r = node.try_clone().map_err(|e| runtime::RuntimeError::Wire(e.into()))?;
                    let mut w = node;
                    runtime::serve(&mut r, &mut w, &mut rt)
                });
                let reader = host.try_clone()?;
                let conn = Conn::Unix(host.try_clone()?);
                Ok((Link::new(reader, host, Peer::Thread { join, conn: Some(conn) }), None))
            }
        }
    }
}

/// A started runtime whose connection has not been accepted yet.
pub enum PendingPeer {
    Child(std::process::Child),
    Thread(std::thread::JoinHandle<Result<(), runtime::RuntimeError>>),
}

impl PendingPeer {
    pub fn attach(self, conn: Conn) -> std::io::Result<Link> {
        let reader = conn.try_clone()?;
        let peer = match self {
            PendingPeer::Child(c) => Peer::Child(c),
            PendingPeer::Thread(join) => Peer::Thread {
                join,
                conn: Some(conn.try_clone()?),
            },
        };
        Ok(Link::new(reader, conn, peer))
    }

    pub fn abandon(self) {
        match self {
            PendingPeer::Child(mut c) => {
                let _ = c.kill();
                let _ = c.wait();
            }
            PendingPeer::Thread(_) => {}
        }
    }
}
