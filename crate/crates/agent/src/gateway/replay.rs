use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, ChatTurn, Completion, GatewayError, Usage};

pub const SCRIPT_FORMAT: u32 = 1;

/// Which call an entry answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// The n-th call to the backend, counting from 1.
    Ordinal(usize),
    /// Any call whose [`prompt_hash`] equals this.
    PromptHash(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: String,
}

/// What happens once every entry has been used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exhaustion {
    #[default]
    Error,
    RepeatLast,
}

/// Scripted responses, stored as pretty JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub format: u32,
    #[serde(default)]
    pub exhaustion: Exhaustion,
    pub entries: Vec<ReplayEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid replay script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid replay script: {0}")]
    Invalid(String),
}

impl ReplayScript {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        ReplayScript {
            format: SCRIPT_FORMAT,
            exhaustion: Exhaustion::Error,
            entries,
        }
    }

    /// Responses answering calls 1, 2, ... in order.
    pub fn ordinal<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            responses
                .into_iter()
                .enumerate()
                .map(|(i, r)| ReplayEntry {
                    matcher: Matcher::Ordinal(i + 1),
                    response: r.into(),
                })
                .collect(),
        )
    }

    /// Ordinals must be distinct and positive and hashes well formed.
    /// Repeated hashes are allowed and answer in file order.
    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.format != SCRIPT_FORMAT {
            return Err(ScriptError::Invalid(format!("unsupported format {}", self.format)));
        }
        let mut ordinals = BTreeSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            match &e.matcher {
                Matcher::Ordinal(0) => return Err(ScriptError::Invalid(format!("entry {i}: ordinals start at 1"))),
                Matcher::Ordinal(n) if !ordinals.insert(*n) => {
                    return Err(ScriptError::Invalid(format!("entry {i}: ordinal {n} repeated")))
                }
                Matcher::PromptHash(h) if h.len() != 64 || !h.bytes().all(|b| b.is_ascii_hexdigit()) => {
                    return Err(ScriptError::Invalid(format!("entry {i}: bad prompt hash {h:?}")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Appends the entries of `other`; the result must still validate.
    pub fn merged(mut self, other: ReplayScript) -> Result<Self, ScriptError> {
        self.entries.extend(other.entries);
        self.validate()?;
        Ok(self)
    }

    /// Ordinal entries first by ordinal, then hash entries by hash. Entries
    /// sharing a hash keep their relative order, so replay is unchanged.
    pub fn canonical(mut self) -> Self {
        self.entries.sort_by(|a, b| match (&a.matcher, &b.matcher) {
            (Matcher::Ordinal(x), Matcher::Ordinal(y)) => x.cmp(y),
            (Matcher::Ordinal(_), Matcher::PromptHash(_)) => std::cmp::Ordering::Less,
            (Matcher::PromptHash(_), Matcher::Ordinal(_)) => std::cmp::Ordering::Greater,
            (Matcher::PromptHash(x), Matcher::PromptHash(y)) => x.cmp(y),
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let script: ReplayScript = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("script serializes");
        text.push('\n');
        text
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScriptError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

struct Cursor {
    calls: usize,
    used: Vec<bool>,
    last: Option<usize>,
}

/// Answers from a [`ReplayScript`]; never touches the network.
///
/// Matching is serialized so ordinals count calls in arrival order. A
/// prompt-hash entry is preferred over an ordinal one for the same call.
pub struct ReplayBackend {
    script: ReplayScript,
    cursor: Mutex<Cursor>,
}

impl ReplayBackend {
    pub fn new(script: ReplayScript) -> Self {
        let used = vec![false; script.entries.len()];
        ReplayBackend {
            script,
            cursor: Mutex::new(Cursor { calls: 0, used, last: None }),
        }
    }

    pub fn remaining(&self) -> usize {
        self.cursor.lock().expect("cursor lock").used.iter().filter(|u| !**u).count()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        let hash = prompt_hash(turns);
        let mut cur = self.cursor.lock().expect("cursor lock");
        cur.calls += 1;
        let ordinal = cur.calls;
        let unused = |i: &usize| !cur.used[*i];
        let entries = &self.script.entries;
        let found = (0..entries.len())
            .filter(unused)
            .find(|&i| entries[i].matcher == Matcher::PromptHash(hash.clone()))
            .or_else(|| (0..entries.len()).filter(unused).find(|&i| entries[i].matcher == Matcher::Ordinal(ordinal)));
        let index = match found {
            Some(i) => i,
            None if cur.used.iter().all(|u| *u) => match (self.script.exhaustion, cur.last) {
                (Exhaustion::RepeatLast, Some(last)) => last,
                _ => return Err(GatewayError::ScriptExhausted(entries.len())),
            },
            None => {
                return Err(GatewayError::NoMatchingEntry {
                    ordinal,
                    prompt_hash: hash,
                })
            }
        };
        cur.used[index] = true;
        cur.last = Some(index);
        Ok(Completion {
            text: entries[index].response.clone(),
            usage: Usage::default(),
        })
    }
}
