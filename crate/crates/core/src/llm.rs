//! Language-model providers for the verifier.
//!
//! Wire protocol of [`RemoteLlm`]: `POST {"system": text, "user": text}`,
//! answered by `{"content": text}`.
//!
//! [`ScriptedLlm`] answers from a JSON script instead of a network call:
//!
//! ```json
//! {
//!   "default": "[]",
//!   "by_hash": { "<sha256 hex of system + \"\\n\\n\" + user>": "..." },
//!   "by_sequence": { "0": "...", "1": "..." },
//!   "rules": [
//!     { "layer": "Syntax", "function": "forward", "contains": "delegatecall",
//!       "response": [ { "swc_id": "SWC-112", "title": "...", "reason": "..." } ] },
//!     { "function": "broken", "fail": "simulated outage" }
//!   ]
//! }
//! ```
//!
//! Lookup order is hash, then call sequence number (0-based, counted across
//! all calls to the provider), then the first matching rule, then `default`.
//! Rule fields are all optional; `contains` is matched against the target
//! section of the user prompt only (retrieved exemplars are ignored), and a
//! response that is not a JSON string is sent back serialized. A rule with
//! `fail` makes the call return a provider error. Sequence keys are only
//! reproducible when verification runs with parallelism 1.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{resolve_key, HttpJson, Secret, DEFAULT_API_KEY_ENV};
use crate::error::ProviderError;
use crate::verifier::{prompt_function, prompt_layer, EXEMPLAR_HEADING};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
}

impl ChatRequest {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update(b"\n\n");
        h.update(self.user.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub kind: LlmKind,
    pub endpoint: Option<String>,
    pub script_path: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub api_key_env: String,
    /// Explicit key; takes precedence over `api_key_env`.
    #[serde(skip)]
    pub api_key: Option<Secret>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            kind: LlmKind::Mock,
            endpoint: None,
            script_path: None,
            timeout_ms: 120_000,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            api_key: None,
        }
    }
}

pub fn llm_from_config(config: &LlmConfig) -> Result<Box<dyn LlmProvider>, ProviderError> {
    match config.kind {
        LlmKind::Remote => Ok(Box::new(RemoteLlm::new(config)?)),
        LlmKind::Mock => match &config.script_path {
            Some(p) => Ok(Box::new(ScriptedLlm::from_file(Path::new(p))?)),
            None => Ok(Box::new(ScriptedLlm::default())),
        },
    }
}

#[derive(Serialize)]
struct ChatBody<'a> {
    system: &'a str,
    user: &'a str,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

#[derive(Debug)]
pub struct RemoteLlm {
    http: HttpJson,
    name: String,
}

impl RemoteLlm {
    pub fn new(config: &LlmConfig) -> Result<Self, ProviderError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| ProviderError::InvalidConfig("remote provider needs an endpoint".into()))?;
        Ok(Self {
            http: HttpJson::new(
                endpoint,
                Duration::from_millis(config.timeout_ms),
                config.max_retries,
                Duration::from_millis(config.backoff_ms),
                config.max_in_flight,
                resolve_key(config.api_key.as_ref(), &config.api_key_env),
            ),
            name: format!("remote:{endpoint}"),
        })
    }
}

impl LlmProvider for RemoteLlm {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let reply: ChatReply = self
            .http
            .post(&ChatBody {
                system: &request.system,
                user: &request.user,
            })
            .map_err(ProviderError::Unavailable)?;
        Ok(reply.content)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub layer: Option<String>,
    #[serde(default)]
    pub function: Option<String>,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub response: Option<serde_json::Value>,
    #[serde(default)]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub default: Option<serde_json::Value>,
    #[serde(default)]
    pub by_hash: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub by_sequence: BTreeMap<usize, serde_json::Value>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

#[derive(Debug, Default)]
pub struct ScriptedLlm {
    script: Script,
    calls: AtomicUsize,
}

fn render(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ScriptedLlm {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text)
            .map(Self::new)
            .map_err(|e| ProviderError::InvalidConfig(format!("bad mock script: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn rule_matches(rule: &ScriptRule, request: &ChatRequest) -> bool {
        let target = request
            .user
            .split(EXEMPLAR_HEADING)
            .next()
            .unwrap_or_default();
        rule.layer
            .as_deref()
            .is_none_or(|l| prompt_layer(&request.system).is_some_and(|got| got.name() == l))
            && rule
                .function
                .as_deref()
                .is_none_or(|f| prompt_function(&request.user) == Some(f))
            && rule.contains.as_deref().is_none_or(|c| target.contains(c))
    }
}

impl LlmProvider for ScriptedLlm {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let seq = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(v) = self.script.by_hash.get(&request.hash()) {
            return Ok(render(v));
        }
        if let Some(v) = self.script.by_sequence.get(&seq) {
            return Ok(render(v));
        }
        if let Some(rule) = self.script.rules.iter().find(|r| Self::rule_matches(r, request)) {
            if let Some(msg) = &rule.fail {
                return Err(ProviderError::Unavailable(msg.clone()));
            }
            return Ok(rule.response.as_ref().map(render).unwrap_or_else(|| "[]".into()));
        }
        Ok(self.script.default.as_ref().map(render).unwrap_or_else(|| "[]".into()))
    }
}
