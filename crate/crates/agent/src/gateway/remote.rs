use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatTurn, Completion, GatewayError, Usage};

/// HTTP requests issued by every [`RemoteBackend`] in this process.
pub static HTTP_REQUESTS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Replay,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full URL of the chat-completions endpoint.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub credential_env: Option<String>,
    /// Replay script path, for the replay kind.
    #[serde(default)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Profiles {
    profiles: BTreeMap<String, BackendConfig>,
}

impl BackendConfig {
    pub fn replay(script: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Replay,
            endpoint: None,
            model: String::new(),
            temperature: 0.0,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            credential_env: None,
            script: Some(script.into()),
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>, credential_env: Option<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            model: model.into(),
            script: None,
            credential_env,
            ..Self::replay("")
        }
    }

    /// Parses `replay:<path>` or `remote:<profile>`; profiles are the
    /// `[profiles.<name>]` tables of `profiles_file`.
    pub fn from_flag(flag: &str, profiles_file: &Path) -> Result<Self, GatewayError> {
        match flag.split_once(':') {
            Some(("replay", path)) if !path.is_empty() => Ok(Self::replay(path)),
            Some(("remote", name)) if !name.is_empty() => {
                let text = std::fs::read_to_string(profiles_file)
                    .map_err(|e| GatewayError::Config(format!("{}: {e}", profiles_file.display())))?;
                let mut all: Profiles = toml::from_str(&text).map_err(|e| GatewayError::Config(e.to_string()))?;
                let config = all
                    .profiles
                    .remove(name)
                    .ok_or_else(|| GatewayError::Config(format!("no backend profile {name:?}")))?;
                if config.kind != BackendKind::Remote {
                    return Err(GatewayError::Config(format!("profile {name:?} is not a remote backend")));
                }
                Ok(config)
            }
            _ => Err(GatewayError::Config(format!(
                "backend must be replay:<path> or remote:<profile>, got {flag:?}"
            ))),
        }
    }
}

/// A generic messages-array chat-completion client.
pub struct RemoteBackend {
    config: BackendConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Done(Completion),
    Retry(GatewayError),
    Fail(GatewayError),
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("remote backend needs an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(RemoteBackend { config, endpoint, client })
    }

    fn body(&self, turns: &[ChatTurn]) -> Value {
        let messages: Vec<Value> = turns
            .iter()
            .map(|t| {
                if t.attachments.is_empty() {
                    json!({ "role": t.role, "content": t.content })
                } else {
                    let mut parts = vec![json!({ "type": "text", "text": t.content })];
                    parts.extend(t.attachments.iter().map(|a| {
                        json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{};base64,{}", a.media_type, a.data) }
                        })
                    }));
                    json!({ "role": t.role, "content": parts })
                }
            })
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        })
    }

    fn attempt(&self, body: &Value, key: Option<&str>) -> Attempt {
        HTTP_REQUESTS.fetch_add(1, Ordering::Relaxed);
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(GatewayError::Timeout),
            Err(e) => return Attempt::Retry(GatewayError::Transport(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(GatewayError::Timeout),
            Err(e) => return Attempt::Retry(GatewayError::Transport(e.to_string())),
        };
        match status.as_u16() {
            200..=299 => match parse_completion(&text) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fail(e),
            },
            401 | 403 => Attempt::Fail(GatewayError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => Attempt::Retry(GatewayError::Transport(format!("HTTP {status}"))),
            _ => Attempt::Fail(GatewayError::Response(format!("HTTP {status}: {}", truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn parse_completion(text: &str) -> Result<Completion, GatewayError> {
    let v: Value = serde_json::from_str(text).map_err(|e| GatewayError::Response(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Response("no choices[0].message.content".into()))?;
    let count = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        text: content.to_string(),
        usage: Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    })
}

impl Backend for RemoteBackend {
    fn complete(&self, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        let key = match &self.config.credential_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| GatewayError::Auth(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let body = self.body(turns);
        let mut last = GatewayError::Timeout;
        for retry in 0..=self.config.max_retries {
            if retry > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (retry - 1).min(6)));
            }
            match self.attempt(&body, key.as_deref()) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => last = e,
            }
        }
        Err(last)
    }
}
