//! Chat-model access behind one interface: a remote chat-completion backend,
//! a replay backend answering from a recorded script, and a transcript of
//! every exchange.

mod remote;
mod replay;

use std::fmt;
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use remote::{BackendConfig, BackendKind, RemoteBackend, HTTP_REQUESTS};
pub use replay::{Exhaustion, Matcher, ReplayBackend, ReplayEntry, ReplayScript, SCRIPT_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An inline image sent alongside a turn's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub media_type: String,
    /// Base64 of the raw bytes.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl ChatTurn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatTurn {
            role,
            content: content.into(),
            attachments: Vec::new(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn with_attachment(mut self, media_type: impl Into<String>, data: impl Into<String>) -> Self {
        self.attachments.push(Attachment {
            media_type: media_type.into(),
            data: data.into(),
        });
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("no turns to send")]
    EmptyTurns,
    #[error("turn {0} has empty content")]
    EmptyContent(usize),
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("replay script exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("no scripted response matches call {ordinal} (prompt hash {prompt_hash})")]
    NoMatchingEntry { ordinal: usize, prompt_hash: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Worth repeating the same request.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Timeout | GatewayError::Transport(_))
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, turns: &[ChatTurn]) -> Result<Completion, GatewayError>;
}

/// Whitespace-normalized SHA-256 over roles, contents and attachments.
///
/// Runs of whitespace collapse to one space, so re-wrapping a template line
/// keeps the hash while any change of wording breaks it.
pub fn prompt_hash(turns: &[ChatTurn]) -> String {
    let mut h = Sha256::new();
    for t in turns {
        h.update(t.role.as_str());
        h.update(b"\n");
        for (i, word) in t.content.split_whitespace().enumerate() {
            if i > 0 {
                h.update(b" ");
            }
            h.update(word);
        }
        for a in &t.attachments {
            h.update(b"\n@");
            h.update(&a.media_type);
            h.update(b":");
            h.update(Sha256::digest(a.data.as_bytes()));
        }
        h.update(b"\n\n");
    }
    hex::encode(h.finalize())
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub(crate) fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One call through the gateway, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub ordinal: usize,
    pub prompt_hash: String,
    pub turns: Vec<ChatTurn>,
    pub response: Result<String, String>,
    pub usage: Usage,
    pub started_ms: u64,
    pub elapsed_ms: u64,
}

/// A backend plus the transcript of everything sent through it.
pub struct Gateway {
    backend: Box<dyn Backend>,
    transcript: Mutex<Vec<Exchange>>,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway {
            backend: Box::new(backend),
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn replay(script: ReplayScript) -> Self {
        Self::new(ReplayBackend::new(script))
    }

    /// Builds the backend described by `config`.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        match config.kind {
            BackendKind::Replay => {
                let path = config
                    .script
                    .as_ref()
                    .ok_or_else(|| GatewayError::Config("replay backend needs a script path".into()))?;
                let script = ReplayScript::load(path).map_err(|e| GatewayError::Config(e.to_string()))?;
                Ok(Self::replay(script))
            }
            BackendKind::Remote => Ok(Self::new(RemoteBackend::new(config.clone())?)),
        }
    }

    pub fn complete(&self, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        if turns.is_empty() {
            return Err(GatewayError::EmptyTurns);
        }
        if let Some(i) = turns.iter().position(|t| t.content.trim().is_empty()) {
            return Err(GatewayError::EmptyContent(i));
        }
        let started_ms = unix_ms();
        let clock = Instant::now();
        let result = self.backend.complete(turns);
        let exchange = Exchange {
            ordinal: 0,
            prompt_hash: prompt_hash(turns),
            turns: turns.to_vec(),
            response: result.as_ref().map(|c| c.text.clone()).map_err(ToString::to_string),
            usage: result.as_ref().map(|c| c.usage).unwrap_or_default(),
            started_ms,
            elapsed_ms: clock.elapsed().as_millis() as u64,
        };
        let mut log = self.transcript.lock().expect("transcript lock");
        let ordinal = log.len() + 1;
        log.push(Exchange { ordinal, ..exchange });
        result
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn calls(&self) -> usize {
        self.transcript.lock().expect("transcript lock").len()
    }

    /// The session so far as a replay script keyed by prompt hash; failed
    /// calls are left out.
    pub fn to_script(&self) -> ReplayScript {
        let entries = self
            .transcript()
            .into_iter()
            .filter_map(|e| {
                e.response.ok().map(|response| ReplayEntry {
                    matcher: Matcher::PromptHash(e.prompt_hash),
                    response,
                })
            })
            .collect();
        ReplayScript {
            format: SCRIPT_FORMAT,
            exhaustion: Exhaustion::Error,
            entries,
        }
    }
}
