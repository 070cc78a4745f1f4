//! Run configuration: built-in defaults, then a flat TOML file, then
//! command-line flags.
//!
//! ```toml
//! theta = 0.9
//! d_max = 3
//! top_k = 10
//! kb_path = "patterns.kb"
//! gate = 0.7
//! embedding_provider = "remote"
//! embedding_endpoint = "https://example.invalid/v1/embeddings"
//! embedding_model = "text-embedding-3-small"
//! embedding_api_key = "${EMBEDDING_KEY}"
//! llm_provider = "mock"
//! llm_script = "script.json"
//! ```
//!
//! `${NAME}` is expanded from the environment only in keys ending in
//! `_api_key`; everywhere else it is literal text.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use solaudit_core::embedding::{ProviderConfig, ProviderKind, Secret, DEFAULT_DIM};
use solaudit_core::kb::{Threshold, DEFAULT_TOP_K};
use solaudit_core::llm::{LlmConfig, LlmKind};
use solaudit_core::slicer::DEFAULT_D_MAX;
use solaudit_core::verifier::Aggregation;

pub const DEFAULT_GATE: f64 = 0.7;
pub const DEFAULT_KB_PATH: &str = "solaudit.kb";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub embedding: ProviderConfig,
    pub llm: LlmConfig,
    pub theta: f64,
    pub d_max: usize,
    pub top_k: usize,
    pub kb_path: PathBuf,
    pub severity_table_path: Option<PathBuf>,
    pub log_level: LogLevel,
    pub gate: f64,
    pub parallelism: usize,
    pub aggregation: Aggregation,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            embedding: ProviderConfig::local(DEFAULT_DIM),
            llm: LlmConfig::default(),
            theta: Threshold::default().theta(),
            d_max: DEFAULT_D_MAX,
            top_k: DEFAULT_TOP_K,
            kb_path: PathBuf::from(DEFAULT_KB_PATH),
            severity_table_path: None,
            log_level: LogLevel::Warn,
            gate: DEFAULT_GATE,
            parallelism: 1,
            aggregation: Aggregation::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EmbeddingChoice {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LlmChoice {
    Mock,
    Remote,
}

/// Every key the file may set.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    theta: Option<f64>,
    d_max: Option<usize>,
    top_k: Option<usize>,
    kb_path: Option<PathBuf>,
    severity_table_path: Option<PathBuf>,
    log_level: Option<LogLevel>,
    gate: Option<f64>,
    parallelism: Option<usize>,
    aggregation: Option<Aggregation>,

    embedding_provider: Option<EmbeddingChoice>,
    embedding_endpoint: Option<String>,
    embedding_model: Option<String>,
    embedding_dim: Option<usize>,
    embedding_timeout_ms: Option<u64>,
    embedding_max_retries: Option<u32>,
    embedding_backoff_ms: Option<u64>,
    embedding_max_in_flight: Option<usize>,
    embedding_batch_size: Option<usize>,
    embedding_api_key_env: Option<String>,
    embedding_api_key: Option<String>,
    embedding_strip_comments: Option<bool>,

    llm_provider: Option<LlmChoice>,
    llm_endpoint: Option<String>,
    llm_script: Option<String>,
    llm_timeout_ms: Option<u64>,
    llm_max_retries: Option<u32>,
    llm_backoff_ms: Option<u64>,
    llm_max_in_flight: Option<usize>,
    llm_api_key_env: Option<String>,
    llm_api_key: Option<String>,
}

/// Expand `${NAME}` references using `lookup`.
pub fn interpolate(value: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::new();
    let mut rest = value;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| anyhow!("unterminated ${{ in secret value"))?;
        let name = &rest[start + 2..start + end];
        let resolved = lookup(name).ok_or_else(|| anyhow!("environment variable `{name}` is not set"))?;
        out.push_str(&resolved);
        rest = &rest[start + end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

impl AppConfig {
    /// Layer a TOML document over `self`.
    pub fn merge_toml(&mut self, text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
        let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
        for (key, value) in table.iter_mut() {
            if key.ends_with("_api_key") {
                let raw = value
                    .as_str()
                    .ok_or_else(|| anyhow!("`{key}` must be a string"))?;
                *value = toml::Value::String(interpolate(raw, lookup).with_context(|| format!("in `{key}`"))?);
            }
        }
        let file: FileConfig = table.try_into().context("invalid config")?;

        set!(self.theta, file.theta);
        set!(self.d_max, file.d_max);
        set!(self.top_k, file.top_k);
        set!(self.kb_path, file.kb_path);
        if file.severity_table_path.is_some() {
            self.severity_table_path = file.severity_table_path;
        }
        set!(self.log_level, file.log_level);
        set!(self.gate, file.gate);
        set!(self.parallelism, file.parallelism);
        set!(self.aggregation, file.aggregation);

        let e = &mut self.embedding;
        if let Some(kind) = file.embedding_provider {
            e.kind = match kind {
                EmbeddingChoice::Local => ProviderKind::LocalDeterministic,
                EmbeddingChoice::Remote => ProviderKind::Remote,
            };
        }
        if file.embedding_endpoint.is_some() {
            e.endpoint = file.embedding_endpoint;
        }
        if file.embedding_model.is_some() {
            e.model_name = file.embedding_model;
        }
        set!(e.dim, file.embedding_dim);
        set!(e.timeout_ms, file.embedding_timeout_ms);
        set!(e.max_retries, file.embedding_max_retries);
        set!(e.backoff_ms, file.embedding_backoff_ms);
        set!(e.max_in_flight, file.embedding_max_in_flight);
        set!(e.batch_size, file.embedding_batch_size);
        set!(e.api_key_env, file.embedding_api_key_env);
        if let Some(key) = file.embedding_api_key {
            e.api_key = Some(Secret::new(key));
        }
        set!(e.strip_comments, file.embedding_strip_comments);

        let l = &mut self.llm;
        if let Some(kind) = file.llm_provider {
            l.kind = match kind {
                LlmChoice::Mock => LlmKind::Mock,
                LlmChoice::Remote => LlmKind::Remote,
            };
        }
        if file.llm_endpoint.is_some() {
            l.endpoint = file.llm_endpoint;
        }
        if file.llm_script.is_some() {
            l.script_path = file.llm_script;
        }
        set!(l.timeout_ms, file.llm_timeout_ms);
        set!(l.max_retries, file.llm_max_retries);
        set!(l.backoff_ms, file.llm_backoff_ms);
        set!(l.max_in_flight, file.llm_max_in_flight);
        set!(l.api_key_env, file.llm_api_key_env);
        if let Some(key) = file.llm_api_key {
            l.api_key = Some(Secret::new(key));
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        self.merge_toml(&text, &|name| std::env::var(name).ok())
            .with_context(|| format!("config {}", path.display()))
    }

    pub fn threshold(&self) -> Threshold {
        Threshold::new(self.theta).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if Threshold::new(self.theta).is_none() {
            bail!("theta must lie in (0, 1], got {}", self.theta);
        }
        if !(0.0..=1.0).contains(&self.gate) {
            bail!("gate must lie in [0, 1], got {}", self.gate);
        }
        if self.top_k == 0 {
            bail!("top_k must be at least 1");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        self.embedding.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(())
    }
}
