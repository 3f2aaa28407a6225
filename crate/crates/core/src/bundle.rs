//! Deployable policy bundles: a manifest plus global and local code units.
//!
//! Code units are Python source meant for the per-robot policy runtime. The
//! native runtime shipped here cannot execute them; it checks their syntax
//! and runs the task's expert controller with any parameters the code sets
//! (see [`PolicyBundle::parameters`]).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineParams, ExpertPolicy};
use crate::model::TaskKind;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GLOBAL_FILE: &str = "global.py";
pub const LOCAL_FILE: &str = "local.py";
pub const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("bundle content hash {actual} does not match manifest {expected}")]
    HashMismatch { expected: String, actual: String },
    #[error("bundle file {0} is missing")]
    MissingFile(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Runs once, centrally, before the first tick.
    Global,
    /// Runs on every robot at every tick.
    Local,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Global => "global",
            Scope::Local => "local",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub name: String,
    pub scope: Scope,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryPoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<String>,
    pub local: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub task: TaskKind,
    /// Content hash of the task spec the bundle was generated for.
    pub task_hash: String,
    pub skills: Vec<SkillEntry>,
    pub entry_points: EntryPoints,
    pub requirements: Vec<String>,
    /// SHA-256 of every file, keyed by file name.
    pub files: BTreeMap<String, String>,
    /// SHA-256 over the manifest fields above and all file contents.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyBundle {
    pub manifest: Manifest,
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PolicyBundle {
    pub fn new(
        task: TaskKind,
        task_hash: impl Into<String>,
        skills: Vec<SkillEntry>,
        entry_points: EntryPoints,
        requirements: Vec<String>,
        files: BTreeMap<String, String>,
    ) -> Self {
        let mut bundle = PolicyBundle {
            manifest: Manifest {
                format: BUNDLE_FORMAT,
                task,
                task_hash: task_hash.into(),
                skills,
                entry_points,
                requirements,
                files: files.iter().map(|(k, v)| (k.clone(), sha256_hex(v.as_bytes()))).collect(),
                content_hash: String::new(),
            },
            files,
        };
        bundle.manifest.content_hash = bundle.compute_hash();
        bundle
    }

    /// Hash over the manifest (minus its own hash) and every file's bytes.
    pub fn compute_hash(&self) -> String {
        let m = &self.manifest;
        let mut h = Sha256::new();
        h.update(format!("format={}\ntask={}\ntask_hash={}\n", m.format, m.task, m.task_hash));
        for s in &m.skills {
            h.update(format!("skill={}:{}:{}\n", s.name, s.scope, s.file));
        }
        h.update(format!(
            "global={}\nlocal={}\n",
            m.entry_points.global.as_deref().unwrap_or(""),
            m.entry_points.local
        ));
        for r in &m.requirements {
            h.update(format!("requires={r}\n"));
        }
        for (name, body) in &self.files {
            h.update(format!("file={name}:{}\n", body.len()));
            h.update(body.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> &str {
        &self.manifest.content_hash
    }

    pub fn verify(&self) -> Result<(), BundleError> {
        for f in self.manifest.skills.iter().map(|s| &s.file) {
            if !self.files.contains_key(f) {
                return Err(BundleError::MissingFile(f.clone()));
            }
        }
        let actual = self.compute_hash();
        if actual != self.manifest.content_hash {
            return Err(BundleError::HashMismatch {
                expected: self.manifest.content_hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn global_code(&self) -> Option<&str> {
        self.files.get(GLOBAL_FILE).map(String::as_str)
    }

    pub fn local_code(&self) -> Option<&str> {
        self.files.get(LOCAL_FILE).map(String::as_str)
    }

    pub fn size_bytes(&self) -> usize {
        self.files.values().map(String::len).sum::<usize>() + self.manifest_text().len()
    }

    pub fn manifest_text(&self) -> String {
        toml::to_string(&self.manifest).expect("manifest serializes")
    }

    /// Writes `manifest.toml` and the code files into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), BundleError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io_err(&path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest_text()).map_err(io_err(&path))
    }

    /// Reads a bundle directory and verifies its hash.
    pub fn read_from(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| BundleError::Manifest(e.to_string()))?;
        let mut files = BTreeMap::new();
        for name in manifest.files.keys() {
            if name.contains('/') || name.contains("..") {
                return Err(BundleError::Manifest(format!("file name {name:?} escapes the bundle")));
            }
            let path = dir.join(name);
            let body = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            files.insert(name.clone(), body);
        }
        let bundle = PolicyBundle { manifest, files };
        bundle.verify()?;
        Ok(bundle)
    }

    /// Numeric task parameters set by the code, e.g. `desired_radius = 0.8`
    /// yields `r_desired = 0.8`. The local unit wins over the global one and
    /// the first assignment in a unit wins.
    pub fn parameters(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for code in [self.local_code(), self.global_code()].into_iter().flatten() {
            for (param, value) in extract_parameters(code) {
                out.entry(param).or_insert(value);
            }
        }
        out
    }

    /// The controller the native runtime executes for this bundle.
    pub fn expert_equivalent(&self, params: BaselineParams) -> ExpertPolicy {
        ExpertPolicy::new(self.manifest.task, params).with_overrides(self.parameters())
    }
}

/// Whether the task's policy has a centrally computed allocation step.
pub fn has_global_skill(kind: TaskKind) -> bool {
    !matches!(kind, TaskKind::Flocking | TaskKind::Pursuing)
}

/// A hand-written bundle for `kind`, used where no generated code exists.
pub fn canned_bundle(kind: TaskKind, task_hash: &str) -> PolicyBundle {
    let mut files = BTreeMap::new();
    let mut skills = Vec::new();
    let global = has_global_skill(kind).then(|| {
        files.insert(GLOBAL_FILE.to_string(), CANNED_GLOBAL.to_string());
        skills.push(SkillEntry {
            name: "allocate_goals".into(),
            scope: Scope::Global,
            file: GLOBAL_FILE.into(),
        });
        "allocate_goals".to_string()
    });
    let params = match kind {
        TaskKind::Encircling => "desired_radius = 1.0\n",
        _ => "",
    };
    files.insert(LOCAL_FILE.to_string(), format!("{params}{CANNED_LOCAL}"));
    skills.push(SkillEntry {
        name: "local_policy".into(),
        scope: Scope::Local,
        file: LOCAL_FILE.into(),
    });
    PolicyBundle::new(
        kind,
        task_hash,
        skills,
        EntryPoints {
            global,
            local: "local_policy".into(),
        },
        vec!["python>=3.10".into()],
        files,
    )
}

const CANNED_GLOBAL: &str = r#"import math


def allocate_goals():
    ids = get_all_robots_id()
    starts = get_all_robots_initial_position()
    goals = {}
    for k, robot_id in enumerate(sorted(ids)):
        goals[robot_id] = starts[robot_id]
    set_assignments(goals)
"#;

const CANNED_LOCAL: &str = r#"MAX_SPEED = 0.5
GAIN = 2.0


def local_policy():
    x, y = get_self_position()
    goal = get_assigned_goal()
    if goal is None:
        set_velocity((0.0, 0.0))
        return
    dx, dy = goal[0] - x, goal[1] - y
    vx, vy = GAIN * dx, GAIN * dy
    norm = (vx * vx + vy * vy) ** 0.5
    if norm > MAX_SPEED:
        vx, vy = vx * MAX_SPEED / norm, vy * MAX_SPEED / norm
    set_velocity((vx, vy))
"#;

/// Code identifiers recognized as task parameters.
const PARAMETER_ALIASES: &[(&str, &[&str])] = &[
    ("r_desired", &["r_desired", "desired_radius", "encircle_radius", "circle_radius", "radius"]),
    ("separation_min", &["separation_min", "min_separation", "safe_distance"]),
    ("reach_tolerance", &["reach_tolerance"]),
    ("visit_tolerance", &["visit_tolerance"]),
    ("achieve_tolerance", &["achieve_tolerance"]),
    ("speed_limit", &["speed_limit", "max_speed", "v_max"]),
];

fn assignment_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(?:#.*)?$")
            .expect("valid pattern")
    })
}

/// `(parameter, value)` pairs in source order.
pub fn extract_parameters(code: &str) -> Vec<(String, f64)> {
    code.lines()
        .filter_map(|line| {
            let caps = assignment_pattern().captures(line)?;
            let ident = caps[1].to_ascii_lowercase();
            let value: f64 = caps[2].parse().ok()?;
            PARAMETER_ALIASES
                .iter()
                .find(|(_, names)| names.contains(&ident.as_str()))
                .map(|(param, _)| (param.to_string(), value))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Syntax,
    EntryPoint,
    Manifest,
    CodeBug,
    InvalidAssignment,
    Protocol,
}

/// One finding from a static check or a runtime failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(file), Some(line)) => write!(f, "{file}:{line}: {}", self.message),
            (Some(file), None) => write!(f, "{file}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error("policy runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("policy runtime did not answer in time")]
    Timeout,
}

/// Anything that can statically validate a bundle.
pub trait CodeChecker {
    fn check(&self, bundle: &PolicyBundle) -> Result<Vec<Diagnostic>, CheckError>;
}

/// Parse-level check of Python code units without executing them:
/// bracket balance, unterminated strings, block headers and indentation,
/// and presence of the declared entry points.
#[derive(Debug, Default, Clone, Copy)]
pub struct SyntaxChecker;

impl CodeChecker for SyntaxChecker {
    fn check(&self, bundle: &PolicyBundle) -> Result<Vec<Diagnostic>, CheckError> {
        Ok(check_bundle(bundle))
    }
}

pub fn check_bundle(bundle: &PolicyBundle) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if let Err(e) = bundle.verify() {
        out.push(Diagnostic {
            kind: DiagnosticKind::Manifest,
            file: Some(MANIFEST_FILE.into()),
            line: None,
            message: e.to_string(),
        });
    }
    for (name, code) in &bundle.files {
        if name.ends_with(".py") {
            out.extend(check_python(name, code));
        }
    }
    let ep = &bundle.manifest.entry_points;
    let mut wanted = vec![(LOCAL_FILE, ep.local.as_str())];
    if let Some(g) = &ep.global {
        wanted.push((GLOBAL_FILE, g.as_str()));
    }
    for (file, name) in wanted {
        let defined = bundle.files.get(file).is_some_and(|code| defines_function(code, name));
        if !defined {
            out.push(Diagnostic {
                kind: DiagnosticKind::EntryPoint,
                file: Some(file.into()),
                line: None,
                message: format!("entry point {name} is not defined"),
            });
        }
    }
    out
}

/// Whether `code` defines a top-level function called `name`.
pub fn defines_function(code: &str, name: &str) -> bool {
    code.lines().any(|l| {
        l.strip_prefix("def ")
            .and_then(|rest| rest.trim_start().strip_prefix(name))
            .is_some_and(|rest| rest.trim_start().starts_with('('))
    })
}

const BLOCK_KEYWORDS: &[&str] = &[
    "def", "class", "if", "elif", "else", "for", "while", "try", "except", "finally", "with",
];

/// Line-numbered syntax diagnostics for one Python source file.
pub fn check_python(file: &str, code: &str) -> Vec<Diagnostic> {
    let diag = |line: usize, message: String| Diagnostic {
        kind: DiagnosticKind::Syntax,
        file: Some(file.to_string()),
        line: Some(line as u32),
        message,
    };
    let mut out = Vec::new();
    let mut stack: Vec<(char, usize)> = Vec::new();
    // Logical lines: (first physical line, indentation, text with strings
    // and comments blanked).
    let mut logical: Vec<(usize, usize, String)> = Vec::new();
    let mut current = String::new();
    let mut start_line = 1;
    let mut indent = 0;
    let mut at_line_start = true;

    let chars: Vec<char> = code.chars().collect();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        if at_line_start && stack.is_empty() {
            let mut j = i;
            let mut width = 0;
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                width += if chars[j] == '\t' { 8 } else { 1 };
                j += 1;
            }
            indent = width;
            start_line = line;
            at_line_start = false;
            i = j;
            continue;
        }
        match c {
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '\'' | '"' => {
                let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
                let opened = line;
                i += if triple { 3 } else { 1 };
                let mut closed = false;
                while i < chars.len() {
                    if chars[i] == '\\' {
                        i += 2;
                        continue;
                    }
                    if chars[i] == '\n' {
                        if !triple {
                            break;
                        }
                        line += 1;
                    }
                    if chars[i] == c && (!triple || (i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c)) {
                        i += if triple { 3 } else { 1 };
                        closed = true;
                        break;
                    }
                    i += 1;
                }
                if !closed {
                    out.push(diag(opened, "unterminated string literal".into()));
                }
                current.push_str("\"\"");
                continue;
            }
            '(' | '[' | '{' => stack.push((c, line)),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match stack.pop() {
                    Some((open, _)) if open == want => {}
                    Some((open, at)) => {
                        out.push(diag(line, format!("'{c}' does not match '{open}' opened on line {at}")));
                    }
                    None => out.push(diag(line, format!("unmatched '{c}'"))),
                }
            }
            '\n' => {
                line += 1;
                if stack.is_empty() {
                    let text = std::mem::take(&mut current);
                    if !text.trim().is_empty() {
                        logical.push((start_line, indent, text));
                    }
                    at_line_start = true;
                    i += 1;
                    continue;
                }
            }
            _ => {}
        }
        if c != '\n' {
            current.push(c);
        }
        i += 1;
    }
    if !current.trim().is_empty() {
        logical.push((start_line, indent, current));
    }
    for (open, at) in stack {
        out.push(diag(at, format!("'{open}' is never closed")));
    }

    for (k, (ln, ind, text)) in logical.iter().enumerate() {
        let trimmed = text.trim();
        let first = trimmed
            .split(|ch: char| !(ch.is_alphanumeric() || ch == '_'))
            .next()
            .unwrap_or("");
        if BLOCK_KEYWORDS.contains(&first) {
            if !trimmed.ends_with(':') && !trimmed.contains(": ") {
                out.push(diag(*ln, format!("expected ':' after {first} statement")));
            } else if trimmed.ends_with(':') {
                match logical.get(k + 1) {
                    Some((_, next_ind, _)) if next_ind > ind => {}
                    _ => out.push(diag(*ln, "expected an indented block".into())),
                }
            }
        }
    }
    out.sort_by_key(|d| d.line);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOCAL: &str = "desired_radius = 1.0  # meters\n\ndef local_policy():\n    pos = get_self_position()\n    set_velocity((0.0, 0.0))\n";
    const GLOBAL: &str = "def allocate(ids):\n    return {i: 0.0 for i in ids}\n";

    fn bundle() -> PolicyBundle {
        PolicyBundle::new(
            TaskKind::Encircling,
            "abc",
            vec![
                SkillEntry {
                    name: "allocate".into(),
                    scope: Scope::Global,
                    file: GLOBAL_FILE.into(),
                },
                SkillEntry {
                    name: "local_policy".into(),
                    scope: Scope::Local,
                    file: LOCAL_FILE.into(),
                },
            ],
            EntryPoints {
                global: Some("allocate".into()),
                local: "local_policy".into(),
            },
            vec!["python>=3.10".into()],
            BTreeMap::from([(GLOBAL_FILE.to_string(), GLOBAL.to_string()), (LOCAL_FILE.to_string(), LOCAL.to_string())]),
        )
    }

    #[test]
    fn round_trip_and_verify() {
        let b = bundle();
        b.verify().unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.write_to(dir.path()).unwrap();
        assert_eq!(PolicyBundle::read_from(dir.path()).unwrap(), b);

        std::fs::write(dir.path().join(LOCAL_FILE), "tampered").unwrap();
        assert!(matches!(
            PolicyBundle::read_from(dir.path()),
            Err(BundleError::HashMismatch { .. })
        ));
    }

    #[test]
    fn hash_covers_contents() {
        let a = bundle();
        let mut b = bundle();
        b.files.insert(LOCAL_FILE.into(), LOCAL.replace("1.0", "0.8"));
        assert_ne!(a.compute_hash(), b.compute_hash());
        assert_eq!(a.hash(), bundle().hash());
    }

    #[test]
    fn extracts_parameters() {
        assert_eq!(bundle().parameters(), BTreeMap::from([("r_desired".to_string(), 1.0)]));
        let code = "RADIUS = .8\nx = 3\nsafe_distance=0.2 # m\n    radius = 5\nMAX_SPEED = 0\n";
        assert_eq!(
            extract_parameters(code),
            vec![
                ("r_desired".to_string(), 0.8),
                ("separation_min".to_string(), 0.2),
                ("r_desired".to_string(), 5.0),
                ("speed_limit".to_string(), 0.0)
            ]
        );
    }

    #[test]
    fn valid_code_has_no_diagnostics() {
        assert!(check_bundle(&bundle()).is_empty());
        let code = "def f(a,\n      b):\n    s = \"(\"  # )\n    t = '''\n]\n'''\n    return [a, b]\n";
        assert!(check_python("x.py", code).is_empty(), "{:?}", check_python("x.py", code));
    }

    #[test]
    fn syntax_errors_are_line_numbered() {
        let d = check_python("local.py", "def f():\n    x = (1, 2\n    return x\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, Some(2));
        assert_eq!(d[0].kind, DiagnosticKind::Syntax);

        let d = check_python("local.py", "def f():\n    return 1]\n");
        assert_eq!(d[0].line, Some(2));
        let d = check_python("local.py", "def f()\n    return 1\n");
        assert_eq!(d[0].line, Some(1));
        let d = check_python("local.py", "def f():\nreturn 1\n");
        assert_eq!(d[0].message, "expected an indented block");
        let d = check_python("local.py", "x = 'abc\n");
        assert_eq!(d[0].message, "unterminated string literal");
    }

    #[test]
    fn canned_bundles_check_clean() {
        for kind in TaskKind::ALL {
            let b = canned_bundle(kind, "h");
            assert!(check_bundle(&b).is_empty(), "{kind}: {:?}", check_bundle(&b));
            assert_eq!(b.global_code().is_some(), has_global_skill(kind));
        }
        let p = canned_bundle(TaskKind::Encircling, "h").parameters();
        assert_eq!(p.get("r_desired"), Some(&1.0));
    }

    #[test]
    fn missing_entry_point_is_reported() {
        let mut b = bundle();
        b.manifest.entry_points.local = "policy_main".into();
        b.manifest.content_hash = b.compute_hash();
        let d = check_bundle(&b);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::EntryPoint);
        assert!(d[0].message.contains("policy_main"));
    }
}
