use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use swarmgen_core::bundle::{CodeChecker, Diagnostic};

use super::*;
use crate::action::{Action, Composite, FnAction};
use crate::feedback::{FeedbackKind, FeedbackSource};
use crate::graph::codegen_order;

/// Written skills keyed by `(name, reuse_key)`. A skill whose signature and
/// dependency subtree are unchanged is taken from here instead of rewritten.
pub type SkillCache = BTreeMap<(String, String), SkillSpec>;

/// State threaded through the pipeline actions.
#[derive(Default)]
pub struct PipelineContext {
    pub instruction: String,
    pub pool: Option<ConstraintPool>,
    pub designed: Vec<SkillSpec>,
    pub graph: Option<SkillGraph>,
    pub assembly: Option<Assembly>,
    pub diagnostics: Vec<Diagnostic>,
    pub cache: SkillCache,
    /// Skills taken from the cache by the last write pass.
    pub reused: Vec<String>,
}

impl PipelineContext {
    pub fn new(instruction: impl Into<String>) -> Self {
        PipelineContext {
            instruction: instruction.into(),
            ..Default::default()
        }
    }

    pub fn with_cache(mut self, cache: SkillCache) -> Self {
        self.cache = cache;
        self
    }

    fn need<'c, T>(slot: &'c Option<T>, what: &str) -> Result<&'c T, PipelineError> {
        slot.as_ref()
            .ok_or_else(|| PipelineError::Precondition(format!("{what} not produced yet")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOutcome {
    pub item: FeedbackItem,
    /// Skills rewritten in response; empty for a success verdict.
    pub implicated: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pool: ConstraintPool,
    pub graph: SkillGraph,
    pub assembly: Assembly,
    /// Static-check findings left after the repair rounds.
    pub diagnostics: Vec<Diagnostic>,
    pub feedback: Vec<FeedbackOutcome>,
    pub cache: SkillCache,
}

impl PipelineOutput {
    pub fn bundle(&self) -> &PolicyBundle {
        &self.assembly.bundle
    }
}

type Step<'a> = Composite<'a, PipelineContext, PipelineError>;

/// The generation pipeline as nested actions, from constraint extraction to
/// static checking.
pub fn generation_actions<'a>(env: &'a Env<'a>, checker: &'a dyn CodeChecker) -> Step<'a> {
    let analysis = Composite::new("analyze")
        .then(FnAction::new("extract-constraints", move |ctx: &mut PipelineContext| {
            ctx.pool = Some(extract_constraints(env, &ctx.instruction)?);
            Ok(())
        }))
        .then(FnAction::new("design-skills", move |ctx: &mut PipelineContext| {
            let pool = PipelineContext::need(&ctx.pool, "constraint pool")?;
            ctx.designed = design_skills(env, &ctx.instruction, pool)?;
            Ok(())
        }))
        .then(FnAction::new("build-skill-graph", move |ctx: &mut PipelineContext| {
            ctx.graph = Some(build_skill_graph(env, ctx.designed.clone())?);
            Ok(())
        }));
    let synthesis = Composite::new("synthesize")
        .then(FnAction::new("write-skills", move |ctx: &mut PipelineContext| write_all(env, ctx)))
        .then(FnAction::new("assemble", move |ctx: &mut PipelineContext| {
            let graph = PipelineContext::need(&ctx.graph, "skill graph")?;
            ctx.assembly = Some(assemble(env.spec, graph).map_err(PipelineError::Assembly)?);
            Ok(())
        }))
        .then(FnAction::new("static-check", move |ctx: &mut PipelineContext| {
            let assembly = PipelineContext::need(&ctx.assembly, "bundle")?;
            ctx.diagnostics = static_check(checker, &assembly.bundle)?;
            Ok(())
        }));
    Composite::new("generate").then(analysis).then(synthesis)
}

/// Writes and reviews every skill without a body, one graph layer at a time.
/// Skills within a layer are independent and written concurrently.
fn write_all(env: &Env, ctx: &mut PipelineContext) -> Result<(), PipelineError> {
    let pool = PipelineContext::need(&ctx.pool, "constraint pool")?.clone();
    let graph = ctx
        .graph
        .as_mut()
        .ok_or_else(|| PipelineError::Precondition("skill graph not produced yet".into()))?;
    ctx.reused.clear();
    let layers = graph.layers().to_vec();
    for layer in layers {
        let mut todo = Vec::new();
        for name in &layer {
            let key = (name.clone(), graph.reuse_key(name));
            let skill = graph.get(name).expect("layer member");
            if skill.body.is_some() {
                continue;
            }
            match ctx.cache.get(&key) {
                Some(cached) if cached.body.is_some() => {
                    let body = cached.body.clone();
                    let flagged = cached.flagged;
                    let s = graph.get_mut(name).expect("layer member");
                    s.body = body;
                    s.flagged = flagged;
                    ctx.reused.push(name.clone());
                }
                _ => todo.push((key, skill.clone())),
            }
        }
        let g: &SkillGraph = graph;
        let results: Vec<Result<SkillSpec, PipelineError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = todo
                .iter()
                .map(|(_, skill)| {
                    let pool = &pool;
                    let instruction = ctx.instruction.as_str();
                    scope.spawn(move || {
                        let deps: Vec<&SkillSpec> =
                            skill.dependencies.iter().map(|d| g.get(d).expect("checked graph")).collect();
                        let written = write_skill(env, instruction, skill, &deps, pool)?;
                        Ok(review_skill(env, &written, pool)?.skill)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("skill writer panicked")).collect()
        });
        for ((key, _), result) in todo.into_iter().zip(results) {
            let done = result?;
            *graph.get_mut(&key.0).expect("layer member") = done.clone();
            ctx.cache.insert(key, done);
        }
    }
    Ok(())
}

/// Runs generation, then up to `repair_rounds` automatic code-bug rounds
/// while the static check reports problems, then the feedback loop until the
/// source is exhausted, reports success, or `feedback_rounds` items were
/// taken.
pub fn run_pipeline(
    env: &Env,
    checker: &dyn CodeChecker,
    feedback: &mut dyn FeedbackSource,
    mut ctx: PipelineContext,
) -> Result<PipelineOutput, PipelineError> {
    generation_actions(env, checker).run(&mut ctx)?;
    let mut outcomes = Vec::new();
    for _ in 0..env.config.repair_rounds {
        if ctx.diagnostics.is_empty() {
            break;
        }
        let item = FeedbackItem::from_diagnostics(ctx.diagnostics.clone());
        outcomes.push(apply_feedback(env, checker, &mut ctx, item)?);
    }
    if ctx.diagnostics.is_empty() {
        for _ in 0..env.config.feedback_rounds {
            let bundle = &PipelineContext::need(&ctx.assembly, "bundle")?.bundle;
            let Some(item) = feedback.next(bundle) else { break };
            if item.is_success() {
                outcomes.push(FeedbackOutcome {
                    item,
                    implicated: Vec::new(),
                });
                break;
            }
            if item.is_empty() {
                continue;
            }
            outcomes.push(apply_feedback(env, checker, &mut ctx, item)?);
            if !ctx.diagnostics.is_empty() {
                break;
            }
        }
    }
    Ok(PipelineOutput {
        pool: ctx.pool.expect("generated"),
        graph: ctx.graph.expect("generated"),
        assembly: ctx.assembly.expect("generated"),
        diagnostics: ctx.diagnostics,
        feedback: outcomes,
        cache: ctx.cache,
    })
}

/// Skills a code bug points at: those whose lines a diagnostic names, and
/// those mentioned by name in the text (tracebacks name the function).
fn implicated_by_code(item: &FeedbackItem, graph: &SkillGraph, assembly: &Assembly) -> Vec<String> {
    let mut out = BTreeSet::new();
    for d in item.diagnostics() {
        if let (Some(file), Some(line)) = (&d.file, d.line) {
            if let Some(skill) = assembly.skill_at(file, line as usize) {
                if graph.get(skill).is_some() {
                    out.insert(skill.to_string());
                }
            }
        }
    }
    for s in graph.skills() {
        let word = Regex::new(&format!(r"\b{}\b", regex::escape(&s.name))).expect("escaped name");
        if word.is_match(item.text()) {
            out.insert(s.name.clone());
        }
    }
    out.into_iter().collect()
}

fn ask_implicated(env: &Env, ctx: &PipelineContext, graph: &SkillGraph, item: &FeedbackItem) -> Result<Vec<String>, PipelineError> {
    let skills: Vec<SkillSpec> = graph.skills().cloned().collect();
    let mut pctx = env.context(Agent::FeedbackAnalyst, &ctx.instruction);
    pctx.insert("skills".into(), describe_skills(&skills));
    pctx.insert("feedback_kind".into(), item.kind().as_str().into());
    pctx.insert("feedback".into(), item.text().into());
    let turns = env.prompts.render("feedback", &pctx)?;
    env.ask("identify-skills", Agent::FeedbackAnalyst, None, &turns, |t| {
        let names: Vec<String> = last_json(t)?;
        if names.is_empty() {
            return Err("no skill named".into());
        }
        match names.iter().find(|n| graph.get(n).is_none()) {
            Some(n) => Err(format!("unknown skill {n}")),
            None => Ok(names.into_iter().collect::<BTreeSet<_>>().into_iter().collect()),
        }
    })
}

/// Rewrites `skill` in light of `item`; `deps` are its current dependencies.
pub fn rewrite_skill(
    env: &Env,
    instruction: &str,
    skill: &SkillSpec,
    deps: &[&SkillSpec],
    pool: &ConstraintPool,
    item: &FeedbackItem,
) -> Result<SkillSpec, PipelineError> {
    let body = skill
        .body
        .clone()
        .ok_or_else(|| PipelineError::Precondition(format!("skill {} has no body", skill.name)))?;
    let mut ctx = skill_context(env, Agent::CodeWriter, instruction, skill, pool);
    ctx.insert("dependency_section".into(), dependency_section(deps));
    ctx.insert("body".into(), body);
    ctx.insert("feedback_kind".into(), item.kind().as_str().into());
    ctx.insert("feedback".into(), item.text().into());
    let turns = env.prompts.render("rewrite_skill", &ctx)?;
    let body = env.ask("rewrite-skill", Agent::CodeWriter, Some(&skill.name), &turns, |t| {
        parse_function(t, &skill.name)
    })?;
    Ok(SkillSpec {
        body: Some(body),
        flagged: false,
        ..skill.clone()
    })
}

/// Finds the skills `item` implicates, rewrites and reviews them in
/// code-generation order, then reassembles and re-checks the bundle. Other
/// skills keep their code.
pub fn apply_feedback(
    env: &Env,
    checker: &dyn CodeChecker,
    ctx: &mut PipelineContext,
    item: FeedbackItem,
) -> Result<FeedbackOutcome, PipelineError> {
    if item.is_empty() {
        return Err(PipelineError::Precondition("empty feedback".into()));
    }
    let pool = PipelineContext::need(&ctx.pool, "constraint pool")?.clone();
    let graph = PipelineContext::need(&ctx.graph, "skill graph")?;
    let assembly = PipelineContext::need(&ctx.assembly, "bundle")?;
    let mut implicated = match item.kind() {
        FeedbackKind::CodeBug => implicated_by_code(&item, graph, assembly),
        _ => Vec::new(),
    };
    if implicated.is_empty() {
        implicated = ask_implicated(env, ctx, graph, &item)?;
    }
    let order = codegen_order(graph);
    let mut graph = graph.clone();
    for name in order.iter().filter(|n| implicated.contains(n)) {
        let skill = graph.get(name).expect("implicated skill").clone();
        let deps: Vec<&SkillSpec> = skill.dependencies.iter().map(|d| graph.get(d).expect("checked graph")).collect();
        let rewritten = rewrite_skill(env, &ctx.instruction, &skill, &deps, &pool, &item)?;
        let reviewed = review_skill(env, &rewritten, &pool)?.skill;
        ctx.cache.insert((name.clone(), graph.reuse_key(name)), reviewed.clone());
        *graph.get_mut(name).expect("implicated skill") = reviewed;
    }
    let assembly = assemble(env.spec, &graph).map_err(PipelineError::Assembly)?;
    ctx.diagnostics = static_check(checker, &assembly.bundle)?;
    ctx.assembly = Some(assembly);
    ctx.graph = Some(graph);
    Ok(FeedbackOutcome { item, implicated })
}
