use std::collections::BTreeMap;

use swarmgen_core::bundle::{EntryPoints, PolicyBundle, Scope, SkillEntry, GLOBAL_FILE, LOCAL_FILE};
use swarmgen_core::TaskSpec;

use crate::graph::{codegen_order, SkillGraph};

pub const REQUIREMENTS: &[&str] = &["python>=3.10"];
/// Entry point generated when several global skills have no caller.
pub const GLOBAL_DISPATCH: &str = "run_global_skills";
/// Entry point generated when several local skills have no caller.
pub const LOCAL_DISPATCH: &str = "run_local_skills";

/// Lines `first..=last` (1-based) of `file` hold `skill`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillSpan {
    pub file: String,
    pub skill: String,
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub bundle: PolicyBundle,
    pub spans: Vec<SkillSpan>,
}

impl Assembly {
    /// The skill whose code covers `line` of `file`.
    pub fn skill_at(&self, file: &str, line: usize) -> Option<&str> {
        self.spans
            .iter()
            .find(|s| s.file == file && (s.first..=s.last).contains(&line))
            .map(|s| s.skill.as_str())
    }
}

fn dispatcher(name: &str, roots: &[&str]) -> String {
    let calls: String = roots.iter().map(|r| format!("    {r}()\n")).collect();
    format!("def {name}():\n{calls}")
}

/// Concatenates bodies in code-generation order with two blank lines
/// between them.
fn build_file(file: &str, parts: &[(&str, &str)], spans: &mut Vec<SkillSpan>) -> String {
    let mut text = String::new();
    let mut line = 1;
    for (i, (skill, body)) in parts.iter().enumerate() {
        if i > 0 {
            text.push_str("\n\n\n");
            line += 2;
        }
        let body = body.trim_matches('\n');
        let lines = body.lines().count().max(1);
        spans.push(SkillSpan {
            file: file.to_string(),
            skill: skill.to_string(),
            first: line,
            last: line + lines - 1,
        });
        text.push_str(body);
        line += lines;
    }
    text.push('\n');
    text
}

/// Builds the bundle from a graph whose skills all have bodies.
///
/// `global.py` holds the global skills plus any local helpers they call;
/// `local.py` holds every local skill. The entry point of each file is its
/// one skill without callers, or a generated dispatcher calling all of them
/// in name order.
pub fn assemble(spec: &TaskSpec, graph: &SkillGraph) -> Result<Assembly, String> {
    if let Some(s) = graph.skills().find(|s| s.body.is_none()) {
        return Err(format!("skill {} has no body", s.name));
    }
    let order = codegen_order(graph);
    let body = |n: &str| graph.get(n).and_then(|s| s.body.as_deref()).expect("checked above");
    let scope = |n: &str| graph.get(n).expect("ordered skill").scope;

    let globals: Vec<&str> = order.iter().map(String::as_str).filter(|n| scope(n) == Scope::Global).collect();
    let locals: Vec<&str> = order.iter().map(String::as_str).filter(|n| scope(n) == Scope::Local).collect();
    if locals.is_empty() {
        return Err("no local skill to run on the robots".into());
    }
    let global_closure: Vec<&str> = order
        .iter()
        .map(String::as_str)
        .filter(|n| globals.iter().any(|g| graph.closure(g).contains(*n)))
        .collect();

    let roots = |names: &[&str]| -> Vec<String> {
        let mut r: Vec<String> = names
            .iter()
            .filter(|n| graph.dependents(n).is_empty())
            .map(|n| n.to_string())
            .collect();
        r.sort();
        r
    };
    let mut local_roots = roots(&locals);
    if local_roots.is_empty() {
        // Every local skill serves a global one; run those no local skill calls.
        local_roots = locals
            .iter()
            .filter(|n| graph.dependents(n).iter().all(|d| scope(d) == Scope::Global))
            .map(|n| n.to_string())
            .collect();
    }
    let global_roots = roots(&globals);

    let mut spans = Vec::new();
    let mut files = BTreeMap::new();
    let mut local_parts: Vec<(&str, &str)> = locals.iter().map(|n| (*n, body(n))).collect();
    let local_dispatch;
    let local_entry = match local_roots.as_slice() {
        [one] => one.clone(),
        many => {
            let refs: Vec<&str> = many.iter().map(String::as_str).collect();
            local_dispatch = dispatcher(LOCAL_DISPATCH, &refs);
            local_parts.push((LOCAL_DISPATCH, &local_dispatch));
            LOCAL_DISPATCH.to_string()
        }
    };
    files.insert(LOCAL_FILE.to_string(), build_file(LOCAL_FILE, &local_parts, &mut spans));

    let global_entry = if globals.is_empty() {
        None
    } else {
        let mut parts: Vec<(&str, &str)> = global_closure.iter().map(|n| (*n, body(n))).collect();
        let dispatch;
        let entry = match global_roots.as_slice() {
            [one] => one.clone(),
            many => {
                let refs: Vec<&str> = many.iter().map(String::as_str).collect();
                dispatch = dispatcher(GLOBAL_DISPATCH, &refs);
                parts.push((GLOBAL_DISPATCH, &dispatch));
                GLOBAL_DISPATCH.to_string()
            }
        };
        files.insert(GLOBAL_FILE.to_string(), build_file(GLOBAL_FILE, &parts, &mut spans));
        Some(entry)
    };

    let skills = order
        .iter()
        .map(|n| SkillEntry {
            name: n.clone(),
            scope: scope(n),
            file: match scope(n) {
                Scope::Global => GLOBAL_FILE.into(),
                Scope::Local => LOCAL_FILE.into(),
            },
        })
        .collect();
    let bundle = PolicyBundle::new(
        spec.kind,
        spec.content_hash(),
        skills,
        EntryPoints {
            global: global_entry,
            local: local_entry,
        },
        REQUIREMENTS.iter().map(|r| r.to_string()).collect(),
        files,
    );
    Ok(Assembly { bundle, spans })
}
