//! From instruction to policy bundle: constraint extraction, skill design,
//! skill graph, bottom-up code writing with review, static checking,
//! assembly and feedback-driven regeneration.
//!
//! Every model exchange goes through [`Env::ask`], which renders nothing
//! itself, retries within the attempt budget and logs each attempt to the
//! provenance record.

mod assemble;
mod run;

use std::collections::{BTreeMap, BTreeSet};

use base64::Engine;
use serde::Deserialize;
use swarmgen_core::bundle::{defines_function, CheckError, CodeChecker, Diagnostic, PolicyBundle, Scope};
use swarmgen_core::render::Frame;
use swarmgen_core::TaskSpec;

use crate::context::{base_context, Agent};
use crate::feedback::FeedbackItem;
use crate::gateway::{prompt_hash, text_hash, unix_ms, ChatTurn, Gateway, GatewayError};
use crate::graph::{GraphError, SkillGraph};
use crate::model::{is_identifier, ConstraintPool, SkillSpec};
use crate::parse::{last_code, last_json};
use crate::prompt::{PromptContext, PromptError, PromptLibrary};
use crate::provenance::{Provenance, ProvenanceRecord};

pub use assemble::{assemble, Assembly, SkillSpan, GLOBAL_DISPATCH, LOCAL_DISPATCH, REQUIREMENTS};
pub use run::{apply_feedback, generation_actions, rewrite_skill, run_pipeline, FeedbackOutcome, PipelineContext, PipelineOutput, SkillCache};

/// Attempts per model exchange.
pub const ATTEMPTS: u32 = 3;
/// Review rounds per skill.
pub const REVIEW_ROUNDS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub attempts: u32,
    pub review_rounds: u32,
    /// Automatic code-bug rounds after a failed static check.
    pub repair_rounds: u32,
    /// Items taken from the feedback source at most.
    pub feedback_rounds: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            attempts: ATTEMPTS,
            review_rounds: REVIEW_ROUNDS,
            repair_rounds: 1,
            feedback_rounds: 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{action}: gateway failed on all {attempts} attempts: {error}")]
    Gateway {
        action: String,
        attempts: u32,
        error: GatewayError,
    },
    #[error("{action}: no usable response in {attempts} attempts: {reason}")]
    Unparseable {
        action: String,
        attempts: u32,
        reason: String,
    },
    #[error("no skill serves constraint(s) {}", .0.join(", "))]
    UncoveredConstraints(Vec<String>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("static check: {0}")]
    Check(#[from] CheckError),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("provenance: {0}")]
    Provenance(#[from] std::io::Error),
}

/// What every step needs: the model, templates, the record and the task.
pub struct Env<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptLibrary,
    pub provenance: &'a Provenance,
    pub spec: &'a TaskSpec,
    pub config: PipelineConfig,
}

impl<'a> Env<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptLibrary, provenance: &'a Provenance, spec: &'a TaskSpec) -> Self {
        Env {
            gateway,
            prompts,
            provenance,
            spec,
            config: PipelineConfig::default(),
        }
    }

    pub fn with_config(mut self, config: PipelineConfig) -> Self {
        self.config = config;
        self
    }

    fn context(&self, agent: Agent, instruction: &str) -> PromptContext {
        base_context(agent, self.spec, instruction)
    }

    /// Sends `turns` until `parse` accepts a response or the attempt budget
    /// runs out. Every attempt is logged.
    pub fn ask<T>(
        &self,
        action: &str,
        agent: Agent,
        skill: Option<&str>,
        turns: &[ChatTurn],
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, PipelineError> {
        let attempts = self.config.attempts.max(1);
        let hash = prompt_hash(turns);
        let mut last = None;
        for attempt in 1..=attempts {
            let started_ms = unix_ms();
            let (outcome, response_hash, value) = match self.gateway.complete(turns) {
                Ok(c) => match parse(&c.text) {
                    Ok(v) => ("ok".to_string(), Some(text_hash(&c.text)), Some(v)),
                    Err(reason) => {
                        let outcome = format!("unparseable: {reason}");
                        last = Some(PipelineError::Unparseable {
                            action: action.into(),
                            attempts,
                            reason,
                        });
                        (outcome, Some(text_hash(&c.text)), None)
                    }
                },
                Err(error) => {
                    let outcome = format!("gateway: {error}");
                    last = Some(PipelineError::Gateway {
                        action: action.into(),
                        attempts,
                        error,
                    });
                    (outcome, None, None)
                }
            };
            self.provenance.append(ProvenanceRecord {
                seq: 0,
                action: action.into(),
                role: agent.as_str().into(),
                skill: skill.map(str::to_string),
                attempt,
                prompt_hash: hash.clone(),
                response_hash,
                outcome,
                started_ms,
                finished_ms: unix_ms(),
            })?;
            if let Some(v) = value {
                return Ok(v);
            }
            // Repeating the request cannot fix credentials or configuration.
            if let Some(PipelineError::Gateway {
                error: GatewayError::Auth(_) | GatewayError::Config(_),
                ..
            }) = &last
            {
                break;
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Deserialize)]
struct NamedItem {
    name: String,
    description: String,
}

/// Asks for the constraint pool of `instruction`.
pub fn extract_constraints(env: &Env, instruction: &str) -> Result<ConstraintPool, PipelineError> {
    if instruction.trim().is_empty() {
        return Err(PipelineError::Precondition("empty instruction".into()));
    }
    let turns = env
        .prompts
        .render("constraints", &env.context(Agent::ConstraintAnalyst, instruction))?;
    env.ask("extract-constraints", Agent::ConstraintAnalyst, None, &turns, |text| {
        let items: Vec<NamedItem> = last_json(text)?;
        if items.is_empty() {
            return Err("empty constraint list".into());
        }
        ConstraintPool::new(items.into_iter().map(|c| (c.name, c.description)).collect())
    })
}

#[derive(Deserialize)]
struct DesignedSkill {
    name: String,
    description: String,
    scope: Scope,
    #[serde(default)]
    constraints: Vec<String>,
}

fn parse_skills(text: &str, pool: &ConstraintPool) -> Result<Vec<SkillSpec>, String> {
    let items: Vec<DesignedSkill> = last_json(text)?;
    if items.is_empty() {
        return Err("empty skill list".into());
    }
    let mut seen = BTreeSet::new();
    items
        .into_iter()
        .map(|s| {
            if !is_identifier(&s.name) {
                return Err(format!("skill name {:?} is not an identifier", s.name));
            }
            if !seen.insert(s.name.clone()) {
                return Err(format!("skill {} listed twice", s.name));
            }
            let constraint_ids = s
                .constraints
                .iter()
                .map(|c| {
                    pool.by_name(c)
                        .or_else(|| pool.by_id(c))
                        .map(|c| c.id.clone())
                        .ok_or_else(|| format!("skill {} cites unknown constraint {c}", s.name))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SkillSpec {
                description: s.description,
                constraint_ids,
                ..SkillSpec::new(s.name, s.scope)
            })
        })
        .collect()
}

fn uncovered(pool: &ConstraintPool, skills: &[SkillSpec]) -> Vec<String> {
    pool.iter()
        .filter(|c| !skills.iter().any(|s| s.constraint_ids.contains(&c.id)))
        .map(|c| c.name.clone())
        .collect()
}

fn describe_skills(skills: &[SkillSpec]) -> String {
    skills.iter().map(SkillSpec::summary).collect::<Vec<_>>().join("\n")
}

/// Asks for the skill list. If some constraint is served by no skill, asks
/// once more with the gap spelled out; a second gap is an error.
pub fn design_skills(env: &Env, instruction: &str, pool: &ConstraintPool) -> Result<Vec<SkillSpec>, PipelineError> {
    if pool.is_empty() {
        return Err(PipelineError::Precondition("empty constraint pool".into()));
    }
    let mut ctx = env.context(Agent::SkillDesigner, instruction);
    ctx.insert("constraints".into(), pool.describe(None));
    let turns = env.prompts.render("skills", &ctx)?;
    let skills = env.ask("design-skills", Agent::SkillDesigner, None, &turns, |t| parse_skills(t, pool))?;
    let gap = uncovered(pool, &skills);
    if gap.is_empty() {
        return Ok(skills);
    }
    ctx.insert("skills".into(), describe_skills(&skills));
    ctx.insert("uncovered".into(), gap.join(", "));
    let turns = env.prompts.render("skills_coverage", &ctx)?;
    let skills = env.ask("design-skills-coverage", Agent::SkillDesigner, None, &turns, |t| parse_skills(t, pool))?;
    match uncovered(pool, &skills) {
        gap if gap.is_empty() => Ok(skills),
        gap => Err(PipelineError::UncoveredConstraints(gap)),
    }
}

/// Asks which skills call which and builds the checked graph.
pub fn build_skill_graph(env: &Env, skills: Vec<SkillSpec>) -> Result<SkillGraph, PipelineError> {
    let mut names = BTreeSet::new();
    for s in &skills {
        if !names.insert(s.name.as_str()) {
            return Err(GraphError::DuplicateSkill(s.name.clone()).into());
        }
    }
    let mut ctx = env.context(Agent::GraphBuilder, "");
    ctx.insert("skills".into(), describe_skills(&skills));
    let turns = env.prompts.render("skill_graph", &ctx)?;
    let deps: BTreeMap<String, Vec<String>> = env.ask("build-skill-graph", Agent::GraphBuilder, None, &turns, |t| {
        let map: BTreeMap<String, Vec<String>> = last_json(t)?;
        match map.keys().find(|k| !names.contains(k.as_str())) {
            Some(k) => Err(format!("dependencies given for unknown skill {k}")),
            None => Ok(map),
        }
    })?;
    let skills = skills
        .into_iter()
        .map(|mut s| {
            let mut d: Vec<String> = deps.get(&s.name).cloned().unwrap_or_default();
            d.sort();
            d.dedup();
            s.dependencies = d;
            s
        })
        .collect();
    Ok(SkillGraph::new(skills)?)
}

fn dependency_section(deps: &[&SkillSpec]) -> String {
    if deps.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nIt may call these functions, which are already written:\n");
    for d in deps {
        out.push_str(&format!("```python\n{}\n```\n", d.body.as_deref().unwrap_or_default()));
    }
    out
}

fn skill_context(env: &Env, agent: Agent, instruction: &str, skill: &SkillSpec, pool: &ConstraintPool) -> PromptContext {
    let mut ctx = env.context(agent, instruction);
    ctx.insert("skill_name".into(), skill.name.clone());
    ctx.insert("skill_scope".into(), skill.scope.to_string());
    ctx.insert("skill_description".into(), skill.description.clone());
    ctx.insert("constraints".into(), pool.describe(Some(&skill.constraint_ids)));
    ctx
}

fn parse_function(text: &str, name: &str) -> Result<String, String> {
    let code = last_code(text, "python").ok_or("no fenced python block")?;
    if !defines_function(code, name) {
        return Err(format!("code does not define {name}"));
    }
    Ok(code.to_string())
}

/// Writes the body of `skill`; `deps` are its already written dependencies.
pub fn write_skill(
    env: &Env,
    instruction: &str,
    skill: &SkillSpec,
    deps: &[&SkillSpec],
    pool: &ConstraintPool,
) -> Result<SkillSpec, PipelineError> {
    if let Some(d) = deps.iter().find(|d| d.body.is_none()) {
        return Err(PipelineError::Precondition(format!("dependency {} has no body", d.name)));
    }
    let mut ctx = skill_context(env, Agent::CodeWriter, instruction, skill, pool);
    ctx.insert("dependency_section".into(), dependency_section(deps));
    let turns = env.prompts.render("write_skill", &ctx)?;
    let body = env.ask("write-skill", Agent::CodeWriter, Some(&skill.name), &turns, |t| {
        parse_function(t, &skill.name)
    })?;
    Ok(SkillSpec {
        body: Some(body),
        ..skill.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Review {
    pub skill: SkillSpec,
    pub verdicts: Vec<Verdict>,
}

#[derive(Deserialize)]
struct VerdictReply {
    verdict: Verdict,
}

/// Reviews `skill` against its constraints for up to the configured number
/// of rounds, adopting each revision. A skill without a passing verdict is
/// flagged; with zero rounds the review is skipped and the skill flagged.
pub fn review_skill(env: &Env, skill: &SkillSpec, pool: &ConstraintPool) -> Result<Review, PipelineError> {
    if skill.body.is_none() {
        return Err(PipelineError::Precondition(format!("skill {} has no body", skill.name)));
    }
    let mut current = SkillSpec {
        flagged: false,
        ..skill.clone()
    };
    let mut verdicts = Vec::new();
    for _ in 0..env.config.review_rounds {
        let mut ctx = skill_context(env, Agent::CodeReviewer, "", &current, pool);
        ctx.insert("body".into(), current.body.clone().unwrap_or_default());
        let turns = env.prompts.render("review_skill", &ctx)?;
        let (verdict, revision) = env.ask("review-skill", Agent::CodeReviewer, Some(&current.name), &turns, |t| {
            let reply: VerdictReply = last_json(t)?;
            match reply.verdict {
                Verdict::Pass => Ok((Verdict::Pass, None)),
                Verdict::Revise => parse_function(t, &current.name).map(|code| (Verdict::Revise, Some(code))),
            }
        })?;
        verdicts.push(verdict);
        match revision {
            None => return Ok(Review { skill: current, verdicts }),
            Some(code) => current.body = Some(code),
        }
    }
    current.flagged = true;
    Ok(Review { skill: current, verdicts })
}

/// Parse-only check of the bundle through the policy runtime or any other
/// checker. Empty means the code parses and the entry points resolve.
pub fn static_check(checker: &dyn CodeChecker, bundle: &PolicyBundle) -> Result<Vec<Diagnostic>, CheckError> {
    checker.check(bundle)
}

/// Frames attached to a critic request at most.
pub const CRITIC_FRAMES: usize = 4;

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum CriticVerdict {
    Success,
    Failure,
}

#[derive(Deserialize)]
struct CriticReply {
    verdict: CriticVerdict,
    #[serde(default)]
    feedback: String,
}

/// Evenly spaced frames, first and last included.
pub fn sample_frames(frames: &[Frame], n: usize) -> Vec<&Frame> {
    match (frames.len(), n) {
        (0, _) | (_, 0) => Vec::new(),
        (len, n) if len <= n => frames.iter().collect(),
        (_, 1) => vec![&frames[0]],
        (len, n) => (0..n).map(|i| &frames[i * (len - 1) / (n - 1)]).collect(),
    }
}

/// Multimodal critic: sends sampled frames as PNG images and parses the
/// verdict.
pub fn frame_critic(env: &Env, instruction: &str, frames: &[Frame]) -> Result<FeedbackItem, PipelineError> {
    let picked = sample_frames(frames, CRITIC_FRAMES);
    if picked.is_empty() {
        return Err(PipelineError::Precondition("no frames to judge".into()));
    }
    let mut ctx = env.context(Agent::Critic, instruction);
    ctx.insert("frame_count".into(), picked.len().to_string());
    let mut turns = env.prompts.render("critic", &ctx)?;
    let last = turns.pop().expect("critic template has turns");
    let with_images = picked.iter().fold(last, |turn, f| {
        turn.with_attachment("image/png", base64::engine::general_purpose::STANDARD.encode(f.to_png()))
    });
    turns.push(with_images);
    let reply: CriticReply = env.ask("critic-review", Agent::Critic, None, &turns, last_json)?;
    let success = matches!(reply.verdict, CriticVerdict::Success);
    let text = match (success, reply.feedback.trim()) {
        (true, "") => "success".to_string(),
        (false, "") => "failure".to_string(),
        (_, f) => f.to_string(),
    };
    Ok(FeedbackItem::critic(text, success))
}

#[cfg(test)]
mod tests;
