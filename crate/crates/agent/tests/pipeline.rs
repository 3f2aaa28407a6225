mod support;

use std::collections::VecDeque;
use std::sync::atomic::Ordering;

use support::*;
use swarmgen_agent::action::Action;
use swarmgen_agent::feedback::{FeedbackItem, NoFeedback};
use swarmgen_agent::gateway::{Gateway, GatewayError, ReplayScript, HTTP_REQUESTS};
use swarmgen_agent::pipeline::{apply_feedback, run_pipeline, Env, PipelineContext, PipelineError, PipelineOutput};
use swarmgen_agent::prompt::PromptLibrary;
use swarmgen_agent::provenance::Provenance;
use swarmgen_core::bundle::{Diagnostic, DiagnosticKind, Scope, SyntaxChecker, LOCAL_FILE};
use swarmgen_core::{TaskKind, TaskSpec};

const GENERATION_SCRIPT: &str = "replay/encircling.json";
const FEEDBACK_SCRIPT: &str = "replay/encircling_feedback.json";
const FEEDBACK_ITEM: &str = "feedback/encircling_radius.json";
const STUDY_VARIANTS: [&str; 2] = ["plain-objective", "plain-policy"];

fn spec() -> TaskSpec {
    TaskSpec::default_for(TaskKind::Encircling)
}

fn run(gateway: &Gateway, provenance: &Provenance, feedback: Vec<FeedbackItem>) -> Result<PipelineOutput, PipelineError> {
    let spec = spec();
    let prompts = PromptLibrary::builtin();
    let env = Env::new(gateway, &prompts, provenance, &spec);
    let mut source: VecDeque<FeedbackItem> = feedback.into();
    run_pipeline(&env, &SyntaxChecker, &mut source, PipelineContext::new(spec.instruction.clone()))
}

fn load(rel: &str) -> ReplayScript {
    ReplayScript::load(fixture(rel)).unwrap_or_else(|e| panic!("{e}; run with SWARMGEN_UPDATE_FIXTURES=1"))
}

fn radius_feedback() -> FeedbackItem {
    let text = std::fs::read_to_string(fixture(FEEDBACK_ITEM)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn check_or_update(rel: &str, text: &str) {
    let path = fixture(rel);
    if updating_fixtures() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, text).unwrap();
        return;
    }
    let on_disk = std::fs::read_to_string(&path).unwrap_or_default();
    assert!(on_disk == text, "{} is stale; rerun with SWARMGEN_UPDATE_FIXTURES=1", path.display());
}

#[test]
fn fixtures_match_a_fresh_recording() {
    let item = FeedbackItem::human(RADIUS_FEEDBACK);
    check_or_update(FEEDBACK_ITEM, &(serde_json::to_string_pretty(&item).unwrap() + "\n"));

    let generation = Gateway::new(EncirclingModel);
    run(&generation, &Provenance::in_memory(), Vec::new()).unwrap();
    check_or_update(GENERATION_SCRIPT, &generation.to_script().canonical().to_json());

    let full = Gateway::new(EncirclingModel);
    run(&full, &Provenance::in_memory(), vec![item]).unwrap();
    let mut feedback = full.to_script();
    feedback.entries.drain(..generation.calls());
    check_or_update(FEEDBACK_SCRIPT, &feedback.canonical().to_json());

    // Prompt-study plumbing: the same model answering two instruction shapes.
    for variant in STUDY_VARIANTS {
        let path = repo_root().join(format!("prompts/variants/encircling/{variant}.txt"));
        let instruction = std::fs::read_to_string(&path).unwrap().trim().to_string();
        let gateway = Gateway::new(EncirclingModel);
        let spec = spec();
        let prompts = PromptLibrary::builtin();
        let provenance = Provenance::in_memory();
        let env = Env::new(&gateway, &prompts, &provenance, &spec);
        run_pipeline(&env, &SyntaxChecker, &mut NoFeedback, PipelineContext::new(instruction)).unwrap();
        check_or_update(&format!("replay/study/encircling/{variant}.json"), &gateway.to_script().canonical().to_json());
    }
}

#[test]
fn golden_encircling_generation() {
    let before = HTTP_REQUESTS.load(Ordering::SeqCst);
    let gateway = Gateway::replay(load(GENERATION_SCRIPT));
    let provenance = Provenance::in_memory();
    let out = run(&gateway, &provenance, Vec::new()).unwrap();

    assert_eq!(out.pool.len(), 6);
    assert_eq!(out.graph.len(), 6);
    let globals: Vec<&str> = out.graph.skills().filter(|s| s.scope == Scope::Global).map(|s| s.name.as_str()).collect();
    assert_eq!(globals, ["Allocate_initial_angles"]);
    let layers: Vec<Vec<&str>> = out.graph.layers().iter().map(|l| l.iter().map(String::as_str).collect()).collect();
    assert_eq!(
        layers,
        [
            vec!["Allocate_initial_angles", "Avoid_collisions", "Get_prey_position", "Limit_velocity"],
            vec!["Compute_target_position"],
            vec!["Update_velocity"],
        ]
    );
    assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
    assert!(out.graph.skills().all(|s| !s.flagged));

    let avoid = out.graph.get("Avoid_collisions").unwrap().body.clone().unwrap();
    assert!(avoid.contains("get_surrounding_obstacles_info"), "review revision adopted");

    let bundle = out.bundle();
    assert_eq!(bundle.manifest.entry_points.global.as_deref(), Some("Allocate_initial_angles"));
    assert_eq!(bundle.manifest.entry_points.local, "Update_velocity");
    assert_eq!(bundle.parameters().get("r_desired"), Some(&1.0));
    bundle.verify().unwrap();

    // 3 analysis calls, 6 writes, 6 first reviews, 1 second review.
    assert_eq!(gateway.calls(), 16);
    assert_eq!(provenance.len(), 16);
    assert!(provenance.records().iter().all(|r| r.outcome == "ok" && r.attempt == 1));
    assert_eq!(HTTP_REQUESTS.load(Ordering::SeqCst), before, "replay never touches the network");
}

#[test]
fn replayed_bundle_is_byte_identical_across_runs() {
    let hashes: Vec<String> = (0..5)
        .map(|_| {
            let gateway = Gateway::replay(load(GENERATION_SCRIPT));
            run(&gateway, &Provenance::in_memory(), Vec::new()).unwrap().bundle().hash().to_string()
        })
        .collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]), "{hashes:?}");
}

#[test]
fn radius_feedback_changes_one_skill() {
    let script = load(GENERATION_SCRIPT).merged(load(FEEDBACK_SCRIPT)).unwrap();
    let before = run(&Gateway::replay(load(GENERATION_SCRIPT)), &Provenance::in_memory(), Vec::new()).unwrap();
    let provenance = Provenance::in_memory();
    let after = run(&Gateway::replay(script), &provenance, vec![radius_feedback()]).unwrap();

    assert_eq!(after.feedback.len(), 1);
    assert_eq!(after.feedback[0].implicated, ["Compute_target_position"]);
    assert_eq!(after.bundle().parameters().get("r_desired"), Some(&0.8));
    for name in SKILL_NAMES.iter().filter(|n| **n != "Compute_target_position") {
        assert_eq!(before.graph.get(name).unwrap().body, after.graph.get(name).unwrap().body, "{name}");
    }
    let actions: Vec<String> = provenance.records().iter().skip(16).map(|r| r.action.clone()).collect();
    assert_eq!(actions, ["identify-skills", "rewrite-skill", "review-skill"]);
}

#[test]
fn cached_skills_are_not_rewritten() {
    let first = run(&Gateway::replay(load(GENERATION_SCRIPT)), &Provenance::in_memory(), Vec::new()).unwrap();
    let gateway = Gateway::new(EncirclingModel);
    let spec = spec();
    let prompts = PromptLibrary::builtin();
    let provenance = Provenance::in_memory();
    let env = Env::new(&gateway, &prompts, &provenance, &spec);
    let ctx = PipelineContext::new(spec.instruction.clone()).with_cache(first.cache.clone());
    let second = run_pipeline(&env, &SyntaxChecker, &mut NoFeedback, ctx).unwrap();
    assert_eq!(gateway.calls(), 3, "only the analysis steps ask the model");
    assert_eq!(second.bundle().hash(), first.bundle().hash());
}

#[test]
fn always_failing_gateway_gives_a_bounded_error() {
    let gateway = Gateway::new(AlwaysFailing(GatewayError::Timeout));
    let provenance = Provenance::in_memory();
    let err = run(&gateway, &provenance, Vec::new()).unwrap_err();
    match err {
        PipelineError::Gateway { action, attempts, error } => {
            assert_eq!(action, "extract-constraints");
            assert_eq!(attempts, 3);
            assert_eq!(error, GatewayError::Timeout);
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(gateway.calls(), 3);
    let attempts: Vec<u32> = provenance.records().iter().map(|r| r.attempt).collect();
    assert_eq!(attempts, [1, 2, 3]);
    assert!(provenance.records().iter().all(|r| r.outcome.starts_with("gateway:")));
}

#[test]
fn unusable_answers_are_retried_then_reported() {
    let gateway = Gateway::new(Constant("I would rather not answer in JSON."));
    let provenance = Provenance::in_memory();
    let err = run(&gateway, &provenance, Vec::new()).unwrap_err();
    assert!(matches!(err, PipelineError::Unparseable { attempts: 3, .. }), "{err}");
    assert_eq!(provenance.len(), 3);
    assert!(provenance.records().iter().all(|r| r.response_hash.is_some()));
}

#[test]
fn code_bug_rewrites_only_the_skill_it_points_at() {
    let gateway = Gateway::new(EncirclingModel);
    let spec = spec();
    let prompts = PromptLibrary::builtin();
    let provenance = Provenance::in_memory();
    let env = Env::new(&gateway, &prompts, &provenance, &spec);
    let mut ctx = PipelineContext::new(spec.instruction.clone());
    swarmgen_agent::pipeline::generation_actions(&env, &SyntaxChecker)
        .run(&mut ctx)
        .unwrap();
    let before = ctx.graph.clone().unwrap();
    let span = ctx
        .assembly
        .as_ref()
        .unwrap()
        .spans
        .iter()
        .find(|s| s.skill == "Compute_target_position")
        .unwrap()
        .clone();
    let item = FeedbackItem::code_bug(
        "ZeroDivisionError while computing the target",
        vec![Diagnostic {
            kind: DiagnosticKind::CodeBug,
            file: Some(LOCAL_FILE.into()),
            line: Some(span.last as u32),
            message: "division by zero".into(),
        }],
    );
    let calls = gateway.calls();
    let outcome = apply_feedback(&env, &SyntaxChecker, &mut ctx, item).unwrap();
    assert_eq!(outcome.implicated, ["Compute_target_position"]);
    // No identification call: the diagnostic line resolved the skill.
    assert_eq!(gateway.calls() - calls, 2);
    let after = ctx.graph.unwrap();
    for s in before.skills() {
        let changed = s.body != after.get(&s.name).unwrap().body;
        assert_eq!(changed, s.name == "Compute_target_position", "{}", s.name);
    }
}

#[test]
fn credential_failures_are_not_retried() {
    let gateway = Gateway::new(AlwaysFailing(GatewayError::Auth("SWARMGEN_API_KEY is not set".into())));
    let provenance = Provenance::in_memory();
    let err = run(&gateway, &provenance, Vec::new()).unwrap_err();
    assert!(matches!(err, PipelineError::Gateway { error: GatewayError::Auth(_), .. }), "{err}");
    assert_eq!(gateway.calls(), 1);
    assert_eq!(provenance.len(), 1);
}
