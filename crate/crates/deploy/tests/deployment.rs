use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::time::Duration;

use swarmgen_core::baselines::BaselineParams;
use swarmgen_core::bundle::{canned_bundle, DiagnosticKind, PolicyBundle, LOCAL_FILE};
use swarmgen_core::trial::run_trial;
use swarmgen_core::world::{init_world, perceive, Goal, NoiseModel, Observation, WorldState};
use swarmgen_core::{TaskKind, TaskSpec, Vec2};
use swarmgen_deploy::host::{FaultInjection, PushError};
use swarmgen_deploy::local::GlobalError;
use swarmgen_deploy::runtime::NodeFaults;
use swarmgen_deploy::wire::Kind;
use swarmgen_deploy::{DeployPlan, DeployedController, Deployment, Launcher, LocalRuntime, NodeState, Step};

fn node_bin() -> Launcher {
    Launcher::process(env!("CARGO_BIN_EXE_swarmgen-node"))
}

fn fast_plan() -> DeployPlan {
    let mut plan = DeployPlan { image_kib: 16, ..Default::default() };
    for s in &mut plan.steps {
        s.latency_ms = 0;
    }
    plan
}

fn bundle_for(kind: TaskKind) -> (TaskSpec, PolicyBundle) {
    let spec = TaskSpec::default_for(kind);
    let bundle = canned_bundle(kind, &spec.content_hash());
    (spec, bundle)
}

fn deployment(dir: &std::path::Path, n: u32, launcher: Launcher) -> Deployment {
    Deployment::new(dir, n, fast_plan(), launcher).unwrap()
}

fn observations(spec: &TaskSpec, world: &WorldState) -> BTreeMap<u32, Observation> {
    let mut rng = swarmgen_core::rng::seeded_stream(0, "noise");
    world
        .worker_ids()
        .into_iter()
        .map(|id| (id, perceive(world, id, &spec.robot, &NoiseModel::none(), &mut rng).unwrap()))
        .collect()
}

#[test]
fn provision_single_node() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = deployment(dir.path(), 1, Launcher::Thread);
    assert_eq!(d.state(0), Some(NodeState::Unprovisioned));
    let r = d.provision();
    assert!(r[&0].is_ok());
    assert_eq!(d.state(0), Some(NodeState::Provisioned));
    let reg = Deployment::read_registry(dir.path()).unwrap();
    assert_eq!(reg[0].state, NodeState::Provisioned);
}

#[test]
fn failing_step_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = deployment(dir.path(), 4, Launcher::Thread);
    d.faults = FaultInjection {
        fail_step: BTreeMap::from([(2, Step::InstallRuntime)]),
        ..Default::default()
    };
    let r = d.provision();
    let err = r[&2].as_ref().unwrap_err();
    assert_eq!(err.step, Step::InstallRuntime);
    assert_eq!(d.state(2), Some(NodeState::Failed));
    for id in [0, 1, 3] {
        assert!(r[&id].is_ok());
        assert_eq!(d.state(id), Some(NodeState::Provisioned));
    }
}

#[test]
fn provisioning_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = deployment(dir.path(), 2, Launcher::Thread);
    d.provision();
    let before = d.node_checksum(1).unwrap();
    let mtime = std::fs::metadata(d.node_dir(1).unwrap().join("env/environment.img")).unwrap().modified().unwrap();

    // A fresh deployment over the same root finds every step already done.
    drop(d);
    let mut d = deployment(dir.path(), 2, Launcher::Thread);
    d.provision();
    assert_eq!(d.node_checksum(1).unwrap(), before);
    let again = std::fs::metadata(d.node_dir(1).unwrap().join("env/environment.img")).unwrap().modified().unwrap();
    assert_eq!(mtime, again);
    d.provision();
    assert_eq!(d.node_checksum(1).unwrap(), before);
}

#[test]
fn push_receipt_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bundle) = bundle_for(TaskKind::Encircling);
    let mut d = deployment(dir.path(), 3, Launcher::Thread);
    d.faults.corrupt_push.insert(1);
    d.provision();
    let r = d.push_bundle(&bundle);
    assert_eq!(r[&0].as_ref().unwrap(), bundle.hash());
    assert_eq!(r[&2].as_ref().unwrap(), bundle.hash());
    assert!(matches!(r[&1], Err(PushError::HashMismatch { node: 1, .. })));
    assert_eq!(d.state(1), Some(NodeState::Failed));
    assert!(!d.node_dir(1).unwrap().join("bundle").exists());

    // Re-pushing the same bundle leaves the node untouched.
    let sum = d.node_checksum(0).unwrap();
    d.push_bundle(&bundle);
    assert_eq!(d.node_checksum(0).unwrap(), sum);
}

#[test]
fn push_requires_provisioning() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bundle) = bundle_for(TaskKind::Aggregation);
    let mut d = deployment(dir.path(), 1, Launcher::Thread);
    assert_eq!(d.push_bundle(&bundle)[&0], Err(PushError::NotProvisioned(0)));
}

#[test]
fn check_code_through_local_runtime() {
    let rt = LocalRuntime::spawn(&node_bin(), BaselineParams::default()).unwrap();
    let (_, bundle) = bundle_for(TaskKind::Encircling);
    assert!(rt.check_code(&bundle).unwrap().is_empty());

    let mut broken = bundle.clone();
    let code = broken.files[LOCAL_FILE].replace("set_velocity((vx, vy))", "set_velocity((vx, vy)");
    broken.files.insert(LOCAL_FILE.into(), code);
    broken.manifest.content_hash = broken.compute_hash();
    let d = rt.check_code(&broken).unwrap();
    assert!(!d.is_empty());
    assert_eq!(d[0].kind, DiagnosticKind::Syntax);
    assert_eq!(d[0].file.as_deref(), Some(LOCAL_FILE));
    assert!(d[0].line.is_some());

    let mut no_entry = bundle.clone();
    no_entry.manifest.entry_points.local = "step".into();
    no_entry.manifest.content_hash = no_entry.compute_hash();
    let d = rt.check_code(&no_entry).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].kind, DiagnosticKind::EntryPoint);
    assert!(d[0].message.contains("step"));
}

#[test]
fn global_skill_runs_once_per_request() {
    let rt = LocalRuntime::spawn(&node_bin(), BaselineParams::default()).unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Encircling);
    let world = init_world(&spec, 4).unwrap();
    let map = rt.invoke_global(&bundle, &spec, &world).unwrap().unwrap();
    let mut angles: Vec<f64> = map
        .values()
        .map(|g| match g {
            Goal::Angle(a) => *a,
            other => panic!("{other:?}"),
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let want: Vec<f64> = (0..6).map(|k| TAU * k as f64 / 6.0).collect();
    for (a, w) in angles.iter().zip(&want) {
        assert!((a - w).abs() < 1e-12);
    }
    let t = rt.transcript();
    assert_eq!(t.messages(swarmgen_deploy::link::Direction::Sent).filter(|m| m.kind == Kind::AssignRequest).count(), 1);

    // No global skill: no exchange at all.
    let (spec, bundle) = bundle_for(TaskKind::Pursuing);
    let world = init_world(&spec, 4).unwrap();
    let before = rt.transcript().len();
    assert_eq!(rt.invoke_global(&bundle, &spec, &world).unwrap(), None);
    assert_eq!(rt.transcript().len(), before);
}

#[test]
fn every_task_global_covers_all_robots() {
    let rt = LocalRuntime::spawn(&Launcher::Thread, BaselineParams::default()).unwrap();
    for kind in TaskKind::ALL {
        let (spec, bundle) = bundle_for(kind);
        let world = init_world(&spec, 2).unwrap();
        match rt.invoke_global(&bundle, &spec, &world) {
            Ok(Some(map)) => assert_eq!(map.len(), spec.robot_count, "{kind}"),
            Ok(None) => assert!(bundle.manifest.entry_points.global.is_none(), "{kind}"),
            Err(e) => panic!("{kind}: {e}"),
        }
    }
}

#[test]
fn dropped_assignment_is_rejected() {
    let (spec, bundle) = bundle_for(TaskKind::Encircling);
    let world = init_world(&spec, 1).unwrap();
    let faults = NodeFaults { drop_assignment: true, ..Default::default() };
    for launcher in [node_bin(), Launcher::Thread] {
        let rt = LocalRuntime::spawn_with_faults(&launcher, BaselineParams::default(), &faults).unwrap();
        let err = rt.invoke_global(&bundle, &spec, &world).unwrap_err();
        assert!(matches!(&err, GlobalError::InvalidAssignment(m) if m.contains("robots 5")), "{err}");
    }
}

#[test]
fn act_matches_hand_computed_seek() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Crossing);
    let mut world = init_world(&spec, 1).unwrap();
    let mut d = deployment(dir.path(), 1, node_bin());
    assert!(d.deploy(&bundle)[&0].is_ok());
    assert!(d.init_trial(&spec, &world).is_empty());

    // Lone robot at the origin with its goal 1 m east: P-control at gain 2
    // saturates at v_max along +x.
    world.robots.retain(|r| r.id == 0);
    world.robots[0].position = Vec2::ZERO;
    let mut obs = observations(&spec, &world);
    obs.get_mut(&0).unwrap().assigned_goal = Some(Goal::Point(Vec2::new(1.0, 0.0)));
    let r = d.tick_exchange(&obs);
    assert!(r.substituted.is_empty());
    let v = r.commands[&0];
    assert!((v.x - 0.5).abs() < 1e-12 && v.y.abs() < 1e-12, "{v:?}");

    // Goal 0.1 m north: unsaturated, 2 * 0.1 = 0.2 m/s.
    obs.get_mut(&0).unwrap().assigned_goal = Some(Goal::Point(Vec2::new(0.0, 0.1)));
    let v = d.tick_exchange(&obs).commands[&0];
    assert!(v.x.abs() < 1e-12 && (v.y - 0.2).abs() < 1e-12, "{v:?}");
    d.teardown();
}

#[test]
fn slow_node_gets_zero_and_fails_after_limit() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Aggregation);
    let world = init_world(&spec, 1).unwrap();
    let mut d = deployment(dir.path(), 3, node_bin());
    d.faults.runtime.insert(1, NodeFaults { delay: Some(Duration::from_millis(120)), ..Default::default() });
    d.deploy(&bundle);
    assert!(d.init_trial(&spec, &world).is_empty());
    let obs: BTreeMap<u32, Observation> = observations(&spec, &world)
        .into_iter()
        .filter(|(id, _)| *id < 3)
        .map(|(id, mut o)| {
            o.assigned_goal = Some(Goal::Point(Vec2::new(2.0, 2.0)));
            (id, o)
        })
        .collect();

    let r = d.tick_exchange(&obs);
    assert_eq!(r.substituted, vec![1]);
    assert_eq!(r.commands[&1], Vec2::ZERO);
    assert_ne!(r.commands[&0], Vec2::ZERO);
    let mut failed_at = None;
    for k in 2..=12 {
        let r = d.tick_exchange(&obs);
        if !r.newly_failed.is_empty() {
            assert_eq!(r.newly_failed, vec![1]);
            failed_at = Some(k);
            break;
        }
    }
    assert_eq!(failed_at, Some(swarmgen_deploy::FAULT_LIMIT as usize));
    assert_eq!(d.state(1), Some(NodeState::Failed));
    assert_eq!(d.total_faults(0), Some(0));
    let states = d.teardown();
    assert_eq!(states[&0], NodeState::Stopped);
    assert_eq!(states[&1], NodeState::Failed);
}

#[test]
fn crashed_node_is_substituted() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Aggregation);
    let world = init_world(&spec, 1).unwrap();
    let mut d = deployment(dir.path(), 2, node_bin());
    d.faults.runtime.insert(0, NodeFaults { crash_at: Some(0), ..Default::default() });
    d.deploy(&bundle);
    d.init_trial(&spec, &world);
    let obs: BTreeMap<u32, Observation> = observations(&spec, &world).into_iter().filter(|(id, _)| *id < 2).collect();
    for _ in 0..swarmgen_deploy::FAULT_LIMIT {
        let r = d.tick_exchange(&obs);
        assert_eq!(r.commands[&0], Vec2::ZERO);
        assert!(!r.substituted.contains(&1));
    }
    assert_eq!(d.state(0), Some(NodeState::Failed));
    assert_eq!(d.state(1), Some(NodeState::Running));
}

#[test]
fn raising_policy_reports_code_bug_every_tick() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Aggregation);
    let world = init_world(&spec, 1).unwrap();
    let mut d = deployment(dir.path(), 1, node_bin());
    d.faults.runtime.insert(0, NodeFaults { raise: true, ..Default::default() });
    d.deploy(&bundle);
    d.init_trial(&spec, &world);
    let obs: BTreeMap<u32, Observation> = observations(&spec, &world).into_iter().filter(|(id, _)| *id == 0).collect();
    for _ in 0..20 {
        let r = d.tick_exchange(&obs);
        assert!(r.substituted.is_empty());
        assert_eq!(r.commands[&0], Vec2::ZERO);
        assert_eq!(r.diagnostics[&0][0].kind, DiagnosticKind::CodeBug);
    }
    assert_eq!(d.state(0), Some(NodeState::Running));
}

#[test]
fn teardown_is_idempotent_and_kills_hung_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Aggregation);
    let world = init_world(&spec, 1).unwrap();
    let mut plan = fast_plan();
    plan.grace_ms = 100;
    let mut d = Deployment::new(dir.path(), 3, plan, node_bin()).unwrap();
    d.faults.runtime.insert(2, NodeFaults { hang_at: Some(0), ..Default::default() });
    d.deploy(&bundle);
    d.init_trial(&spec, &world);
    let obs: BTreeMap<u32, Observation> = observations(&spec, &world).into_iter().filter(|(id, _)| *id < 3).collect();
    d.tick_exchange(&obs);
    let states = d.teardown();
    assert_eq!(states[&0], NodeState::Stopped);
    assert_eq!(states[&1], NodeState::Stopped);
    assert_eq!(states[&2], NodeState::Failed);
    assert_eq!(d.teardown(), states);
}

#[test]
fn soak_thousand_ticks_eight_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, bundle) = bundle_for(TaskKind::Aggregation);
    let world = init_world(&spec, 1).unwrap();
    let mut d = deployment(dir.path(), 8, node_bin());
    d.tick_deadline = Duration::from_secs(2);
    assert!(d.deploy(&bundle).values().all(Result::is_ok));
    assert!(d.init_trial(&spec, &world).is_empty());
    let base: BTreeMap<u32, Observation> = observations(&spec, &world).into_iter().filter(|(id, _)| *id < 8).collect();
    for tick in 0..1000 {
        let obs = base
            .iter()
            .map(|(id, o)| {
                let mut o = o.clone();
                o.tick = tick;
                (*id, o)
            })
            .collect();
        let r = d.tick_exchange(&obs);
        assert!(r.substituted.is_empty(), "tick {tick}");
    }
    d.teardown();
    for id in 0..8 {
        let t = d.transcript(id).unwrap();
        let sent: Vec<_> = t.messages(swarmgen_deploy::link::Direction::Sent).collect();
        let got: Vec<_> = t.messages(swarmgen_deploy::link::Direction::Received).collect();
        assert!(sent.windows(2).all(|w| w[0].seq < w[1].seq));
        let observes: Vec<u64> = sent.iter().filter(|m| m.kind == Kind::Observe).map(|m| m.seq).collect();
        let acts: Vec<u64> = got.iter().filter(|m| m.kind == Kind::Act).map(|m| m.seq).collect();
        assert_eq!(observes.len(), 1000);
        assert_eq!(observes, acts);
    }
}

#[test]
fn deployed_trial_matches_in_process_expert() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, bundle) = bundle_for(TaskKind::Encircling);
    spec.trial.max_ticks = 150;
    let mut d = deployment(dir.path(), spec.robot_count as u32, node_bin());
    d.tick_deadline = Duration::from_secs(2);
    assert!(d.deploy(&bundle).values().all(Result::is_ok));
    let station = LocalRuntime::spawn(&node_bin(), BaselineParams::default()).unwrap();
    let deployed = {
        let mut c = DeployedController::new(&mut d, &station, bundle.clone());
        let log = run_trial(&mut c, &spec, 5).unwrap();
        assert_eq!(c.substituted, 0);
        log
    };
    let mut expert = bundle.expert_equivalent(BaselineParams::default());
    let local = run_trial(&mut expert, &spec, 5).unwrap();
    assert_eq!(deployed.records, local.records);
    assert_eq!(deployed.outcome, local.outcome);
    d.teardown();
}

#[test]
fn hung_node_times_out_the_trial() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, bundle) = bundle_for(TaskKind::Aggregation);
    spec.trial.max_ticks = 100;
    let mut d = deployment(dir.path(), spec.robot_count as u32, Launcher::Thread);
    d.faults.runtime.insert(3, NodeFaults { hang_at: Some(5), ..Default::default() });
    d.deploy(&bundle);
    let station = LocalRuntime::spawn(&Launcher::Thread, BaselineParams::default()).unwrap();
    let log = {
        let mut c = DeployedController::new(&mut d, &station, bundle);
        run_trial(&mut c, &spec, 1).unwrap()
    };
    assert_eq!(log.outcome, swarmgen_core::trial::TrialOutcome::PolicyTimeout);
    // Ticks 5 through 13 are substituted; the tenth miss, at tick 14, aborts.
    assert_eq!(log.ticks_run, 5 + swarmgen_deploy::FAULT_LIMIT as u64 - 1);
    d.teardown();
}
