use std::io::Write;
use std::process::{Command, Stdio};

use swarmgen_core::bundle::{canned_bundle, LOCAL_FILE};
use swarmgen_core::world::init_world;
use swarmgen_core::{TaskKind, TaskSpec};
use swarmgen_deploy::wire::{self, AssignReply, AssignRequest, DiagPayload, Kind, Message};

const BIN: &str = env!("CARGO_BIN_EXE_swarmgen-node");

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TaskSpec::default_for(TaskKind::Shaping);
    let mut bundle = canned_bundle(TaskKind::Shaping, &spec.content_hash());
    bundle.write_to(dir.path().join("ok")).unwrap();
    let out = Command::new(BIN).arg("check").arg(dir.path().join("ok")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());

    let code = bundle.files[LOCAL_FILE].replacen("(", "", 1);
    bundle.files.insert(LOCAL_FILE.into(), code);
    bundle.manifest.content_hash = bundle.compute_hash();
    bundle.write_to(dir.path().join("bad")).unwrap();
    let out = Command::new(BIN).arg("check").arg(dir.path().join("bad")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let line = String::from_utf8(out.stdout).unwrap();
    let msg = Message::decode(line.trim().as_bytes()).unwrap();
    assert_eq!(msg.kind, Kind::Diag);
    let d = msg.parse::<DiagPayload>().unwrap();
    assert!(d.diagnostics.iter().any(|d| d.line.is_some() && d.kind == swarmgen_core::bundle::DiagnosticKind::Syntax));

    let out = Command::new(BIN).arg("check").arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn global_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TaskSpec::default_for(TaskKind::Encircling);
    canned_bundle(TaskKind::Encircling, &spec.content_hash()).write_to(dir.path()).unwrap();
    let world = init_world(&spec, 3).unwrap();
    let req = Message::new(Kind::AssignRequest, 1, &AssignRequest { bundle: None, spec, world });

    let mut child = Command::new(BIN)
        .arg("global")
        .arg(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    wire::send(&mut child.stdin.take().unwrap(), &req).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let reply = wire::recv(&mut out.stdout.as_slice()).unwrap().unwrap();
    assert_eq!((reply.kind, reply.seq), (Kind::AssignReply, 1));
    assert_eq!(reply.parse::<AssignReply>().unwrap().assignments.len(), 6);
}

#[test]
fn global_without_global_skill_fails() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TaskSpec::default_for(TaskKind::Pursuing);
    canned_bundle(TaskKind::Pursuing, &spec.content_hash()).write_to(dir.path()).unwrap();
    let world = init_world(&spec, 3).unwrap();
    let req = Message::new(Kind::AssignRequest, 1, &AssignRequest { bundle: None, spec, world });
    let mut child = Command::new(BIN)
        .arg("global")
        .arg(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    wire::send(&mut stdin, &req).unwrap();
    stdin.flush().unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let reply = wire::recv(&mut out.stdout.as_slice()).unwrap().unwrap();
    assert_eq!(reply.kind, Kind::Diag);
}

#[test]
fn usage_errors_exit_two() {
    let out = Command::new(BIN).arg("serve").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN).args(["global", "/nonexistent"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
