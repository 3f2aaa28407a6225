use super::*;
use crate::gateway::{Backend, Completion, Role, Usage};
use crate::model::SkillSpec;
use std::sync::Mutex;
use swarmgen_core::TaskKind;

/// Answers in order, recording the user turn of each request.
struct Scripted {
    replies: Mutex<Vec<String>>,
    seen: Mutex<Vec<ChatTurn>>,
}

impl Scripted {
    fn new(replies: &[&str]) -> Self {
        Scripted {
            replies: Mutex::new(replies.iter().rev().map(|r| r.to_string()).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl Backend for std::sync::Arc<Scripted> {
    fn complete(&self, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        self.seen.lock().unwrap().push(turns.last().unwrap().clone());
        let text = self.replies.lock().unwrap().pop().ok_or(GatewayError::ScriptExhausted(0))?;
        Ok(Completion {
            text,
            usage: Usage::default(),
        })
    }
}

struct Fixture {
    backend: std::sync::Arc<Scripted>,
    gateway: Gateway,
    prompts: PromptLibrary,
    provenance: Provenance,
    spec: TaskSpec,
}

fn fixture(replies: &[&str]) -> Fixture {
    let backend = std::sync::Arc::new(Scripted::new(replies));
    Fixture {
        gateway: Gateway::new(backend.clone()),
        backend,
        prompts: PromptLibrary::builtin(),
        provenance: Provenance::in_memory(),
        spec: TaskSpec::default_for(TaskKind::Encircling),
    }
}

impl Fixture {
    fn env(&self) -> Env<'_> {
        Env::new(&self.gateway, &self.prompts, &self.provenance, &self.spec)
    }
}

fn pool() -> ConstraintPool {
    ConstraintPool::new(vec![
        ("Safety".into(), "no collisions".into()),
        ("Speed".into(), "stay slow".into()),
    ])
    .unwrap()
}

fn written(name: &str) -> SkillSpec {
    SkillSpec {
        body: Some(format!("def {name}():\n    return 0")),
        constraint_ids: vec!["C1".into()],
        ..SkillSpec::new(name, Scope::Local)
    }
}

const PASS: &str = "```json\n{\"verdict\": \"pass\"}\n```";

#[test]
fn ask_retries_until_parseable() {
    let f = fixture(&["no json here", "```json\n[{\"name\": \"Safety\", \"description\": \"d\"}]\n```"]);
    let pool = extract_constraints(&f.env(), "surround the prey").unwrap();
    assert_eq!(pool.names().collect::<Vec<_>>(), ["Safety"]);
    let outcomes: Vec<String> = f.provenance.records().iter().map(|r| r.outcome.clone()).collect();
    assert!(outcomes[0].starts_with("unparseable"));
    assert_eq!(outcomes[1], "ok");
}

#[test]
fn empty_instruction_is_refused_without_a_call() {
    let f = fixture(&[]);
    assert!(matches!(extract_constraints(&f.env(), "  "), Err(PipelineError::Precondition(_))));
    assert_eq!(f.gateway.calls(), 0);
}

#[test]
fn uncovered_constraints_get_one_more_round() {
    let first = "```json\n[{\"name\": \"Move\", \"description\": \"d\", \"scope\": \"local\", \"constraints\": [\"Safety\"]}]\n```";
    let second = "```json\n[{\"name\": \"Move\", \"description\": \"d\", \"scope\": \"local\", \"constraints\": [\"Safety\", \"C2\"]}]\n```";
    let f = fixture(&[first, second]);
    let skills = design_skills(&f.env(), "go", &pool()).unwrap();
    assert_eq!(skills[0].constraint_ids, ["C1", "C2"]);
    assert!(f.backend.seen.lock().unwrap()[1].content.contains("No skill serves these constraints: Speed."));

    let f = fixture(&[first, first]);
    match design_skills(&f.env(), "go", &pool()) {
        Err(PipelineError::UncoveredConstraints(gap)) => assert_eq!(gap, ["Speed"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn graph_answers_must_name_known_skills() {
    let f = fixture(&["```json\n{\"Ghost\": []}\n```"; 3]);
    let err = build_skill_graph(&f.env(), vec![written("A")]).unwrap_err();
    assert!(matches!(err, PipelineError::Unparseable { attempts: 3, .. }), "{err}");

    let f = fixture(&["```json\n{\"A\": [\"B\", \"B\"]}\n```"]);
    let g = build_skill_graph(&f.env(), vec![written("A"), written("B")]).unwrap();
    assert_eq!(g.get("A").unwrap().dependencies, ["B"]);
}

#[test]
fn written_code_must_define_the_function() {
    let f = fixture(&["```python\ndef other():\n    pass\n```", "```python\nSTEP = 1\n\n\ndef A():\n    pass\n```"]);
    let s = write_skill(&f.env(), "go", &SkillSpec::new("A", Scope::Local), &[], &pool()).unwrap();
    assert!(s.body.unwrap().starts_with("STEP = 1"));
    let prompt = &f.backend.seen.lock().unwrap()[0].content;
    assert!(!prompt.contains("already written"));
}

#[test]
fn dependencies_are_shown_to_the_writer() {
    let f = fixture(&["```python\ndef B():\n    return A()\n```"]);
    let dep = written("A");
    write_skill(&f.env(), "go", &SkillSpec::new("B", Scope::Local), &[&dep], &pool()).unwrap();
    let prompt = &f.backend.seen.lock().unwrap()[0].content;
    assert!(prompt.contains("already written:\n```python\ndef A():\n    return 0\n```"));
}

#[test]
fn review_adopts_revisions_and_flags_exhaustion() {
    let revise = "```json\n{\"verdict\": \"revise\"}\n```\n```python\ndef A():\n    return 1\n```";
    let f = fixture(&[revise, PASS]);
    let r = review_skill(&f.env(), &written("A"), &pool()).unwrap();
    assert_eq!(r.verdicts, [Verdict::Revise, Verdict::Pass]);
    assert_eq!(r.skill.body.as_deref(), Some("def A():\n    return 1"));
    assert!(!r.skill.flagged);

    let f = fixture(&[revise, revise]);
    let r = review_skill(&f.env(), &written("A"), &pool()).unwrap();
    assert_eq!(r.verdicts.len(), 2);
    assert!(r.skill.flagged);

    let f = fixture(&[]);
    let config = PipelineConfig {
        review_rounds: 0,
        ..Default::default()
    };
    let r = review_skill(&f.env().with_config(config), &written("A"), &pool()).unwrap();
    assert!(r.skill.flagged && r.verdicts.is_empty());
    assert_eq!(f.gateway.calls(), 0);
}

#[test]
fn a_revise_verdict_without_code_is_unusable() {
    let f = fixture(&["```json\n{\"verdict\": \"revise\"}\n```", PASS]);
    let r = review_skill(&f.env(), &written("A"), &pool()).unwrap();
    assert_eq!(r.verdicts, [Verdict::Pass]);
    assert_eq!(f.provenance.len(), 2);
}

#[test]
fn frame_sampling_keeps_the_ends() {
    let frames: Vec<Frame> = (0..10)
        .map(|tick| Frame {
            tick,
            width: 2,
            height: 2,
            pixels: vec![0; 12],
        })
        .collect();
    let ticks = |n| sample_frames(&frames, n).iter().map(|f| f.tick).collect::<Vec<_>>();
    assert_eq!(ticks(4), [0, 3, 6, 9]);
    assert_eq!(ticks(1), [0]);
    assert_eq!(ticks(20).len(), 10);
    assert!(ticks(0).is_empty());
}

#[test]
fn critic_sends_png_frames() {
    let f = fixture(&["```json\n{\"verdict\": \"failure\", \"feedback\": \"two robots overlap\"}\n```"]);
    let frames: Vec<Frame> = (0..6)
        .map(|tick| Frame {
            tick,
            width: 3,
            height: 2,
            pixels: vec![200; 18],
        })
        .collect();
    let item = frame_critic(&f.env(), "surround the prey", &frames).unwrap();
    assert!(!item.is_success());
    assert_eq!(item.text(), "two robots overlap");
    let seen = f.backend.seen.lock().unwrap();
    assert_eq!(seen[0].role, Role::User);
    assert_eq!(seen[0].attachments.len(), CRITIC_FRAMES);
    let png = base64::engine::general_purpose::STANDARD.decode(&seen[0].attachments[0].data).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert!(seen[0].content.contains("4 frames"));
}
