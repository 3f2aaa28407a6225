//! Constraints and skills as produced by the analysis steps.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use swarmgen_core::bundle::Scope;

/// A named requirement on the policy, e.g. `CollisionAvoidance`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintPool {
    constraints: Vec<Constraint>,
}

impl ConstraintPool {
    /// Assigns ids `C1`, `C2`, ... in order. Names must be unique.
    pub fn new(named: Vec<(String, String)>) -> Result<Self, String> {
        let mut seen = BTreeSet::new();
        let mut constraints = Vec::with_capacity(named.len());
        for (i, (name, description)) in named.into_iter().enumerate() {
            if !is_identifier(&name) {
                return Err(format!("constraint name {name:?} is not an identifier"));
            }
            if !seen.insert(name.clone()) {
                return Err(format!("constraint {name} listed twice"));
            }
            constraints.push(Constraint {
                id: format!("C{}", i + 1),
                name,
                description,
            });
        }
        Ok(ConstraintPool { constraints })
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter()
    }

    pub fn by_name(&self, name: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    pub fn by_id(&self, id: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.id == id)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.constraints.iter().map(|c| c.name.as_str())
    }

    /// One `- Name: description` line per constraint, or only those in `ids`.
    pub fn describe(&self, ids: Option<&[String]>) -> String {
        self.constraints
            .iter()
            .filter(|c| ids.map_or(true, |ids| ids.contains(&c.id)))
            .map(|c| format!("- {}: {}", c.name, c.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A policy function: designed first, written later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub name: String,
    pub description: String,
    pub scope: Scope,
    #[serde(default)]
    pub dependencies: Vec<String>,
    #[serde(default)]
    pub constraint_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    /// Set when review ran out of rounds without a pass.
    #[serde(default)]
    pub flagged: bool,
}

impl SkillSpec {
    pub fn new(name: impl Into<String>, scope: Scope) -> Self {
        SkillSpec {
            name: name.into(),
            description: String::new(),
            scope,
            dependencies: Vec::new(),
            constraint_ids: Vec::new(),
            body: None,
            flagged: false,
        }
    }

    pub fn depends_on(mut self, deps: &[&str]) -> Self {
        self.dependencies = deps.iter().map(|d| d.to_string()).collect();
        self
    }

    /// `- Name (scope): description` for prompts.
    pub fn summary(&self) -> String {
        format!("- {} ({}): {}", self.name, self.scope, self.description)
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
