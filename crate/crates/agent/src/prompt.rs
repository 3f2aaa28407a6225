//! Prompt templates with `{{name}}` placeholders.
//!
//! A template file is a sequence of turns, each opened by a `[system]`,
//! `[user]` or `[assistant]` line. Placeholders are substituted in one pass,
//! so values are never re-expanded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::gateway::{ChatTurn, Role};

/// Templates shipped in the repository's `prompts/` directory.
pub const BUILTIN: &[(&str, &str)] = &[
    ("constraints", include_str!("../../../prompts/constraints.txt")),
    ("critic", include_str!("../../../prompts/critic.txt")),
    ("feedback", include_str!("../../../prompts/feedback.txt")),
    ("review_skill", include_str!("../../../prompts/review_skill.txt")),
    ("rewrite_skill", include_str!("../../../prompts/rewrite_skill.txt")),
    ("skill_graph", include_str!("../../../prompts/skill_graph.txt")),
    ("skills", include_str!("../../../prompts/skills.txt")),
    ("skills_coverage", include_str!("../../../prompts/skills_coverage.txt")),
    ("write_skill", include_str!("../../../prompts/write_skill.txt")),
];

pub type PromptContext = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} needs placeholder {name:?}")]
    MissingPlaceholder { template: String, name: String },
    #[error("template {template:?}: {message}")]
    Malformed { template: String, message: String },
    #[error("{0}")]
    Io(String),
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([a-z_][a-z0-9_]*)\s*\}\}").expect("valid pattern"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    turns: Vec<(Role, String)>,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let malformed = |message: String| PromptError::Malformed {
            template: name.to_string(),
            message,
        };
        let mut turns: Vec<(Role, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let role = match line.trim_end() {
                "[system]" => Some(Role::System),
                "[user]" => Some(Role::User),
                "[assistant]" => Some(Role::Assistant),
                _ => None,
            };
            match (role, turns.last_mut()) {
                (Some(r), _) => turns.push((r, String::new())),
                (None, Some((_, body))) => {
                    body.push_str(line);
                    body.push('\n');
                }
                (None, None) if line.trim().is_empty() => {}
                (None, None) => return Err(malformed(format!("line {} precedes the first turn header", i + 1))),
            }
        }
        if turns.is_empty() {
            return Err(malformed("no turns".into()));
        }
        for (_, body) in &mut turns {
            *body = body.trim_matches('\n').to_string();
        }
        Ok(Template {
            name: name.to_string(),
            turns,
        })
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.turns
            .iter()
            .flat_map(|(_, body)| placeholder().captures_iter(body).map(|c| c[1].to_string()))
            .collect()
    }

    pub fn render(&self, ctx: &PromptContext) -> Result<Vec<ChatTurn>, PromptError> {
        if let Some(name) = self.placeholders().into_iter().find(|p| !ctx.contains_key(p)) {
            return Err(PromptError::MissingPlaceholder {
                template: self.name.clone(),
                name,
            });
        }
        let mut out = Vec::with_capacity(self.turns.len());
        for (role, body) in &self.turns {
            let text = placeholder().replace_all(body, |c: &regex::Captures| ctx[&c[1]].clone());
            if text.trim().is_empty() {
                return Err(PromptError::Malformed {
                    template: self.name.clone(),
                    message: format!("{role} turn renders empty"),
                });
            }
            out.push(ChatTurn::new(*role, text.into_owned()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, Template>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| (name.to_string(), Template::parse(name, text).expect("shipped template parses")))
            .collect();
        PromptLibrary { templates }
    }

    /// The built-in set with every `<name>.txt` in `dir` overriding or
    /// adding a template.
    pub fn with_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut lib = Self::builtin();
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Io(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::Io(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text =
                std::fs::read_to_string(&path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
            lib.templates.insert(name.to_string(), Template::parse(name, &text)?);
        }
        Ok(lib)
    }

    pub fn get(&self, name: &str) -> Result<&Template, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, name: &str, ctx: &PromptContext) -> Result<Vec<ChatTurn>, PromptError> {
        self.get(name)?.render(ctx)
    }
}

/// Renders a built-in template.
pub fn render_prompt(name: &str, ctx: &PromptContext) -> Result<Vec<ChatTurn>, PromptError> {
    static LIB: OnceLock<PromptLibrary> = OnceLock::new();
    LIB.get_or_init(PromptLibrary::builtin).render(name, ctx)
}
