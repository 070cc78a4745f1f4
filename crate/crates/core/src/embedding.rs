//! Text embedding providers.
//!
//! Two providers sit behind [`Embedder`]:
//!
//! * [`LocalHashEmbedder`]: deterministic bag-of-tokens hashing. The text is
//!   split into maximal runs of alphanumeric characters; each token's UTF-8
//!   bytes are hashed with 64-bit FNV-1a (offset basis `0xcbf29ce484222325`,
//!   prime `0x100000001b3`) and the hash modulo `dim` selects a bucket whose
//!   count is incremented. The count vector is then L2-normalized. With
//!   `strip_comments`, Solidity comments are removed before tokenizing.
//! * [`RemoteEmbedder`]: HTTP JSON client. Request
//!   `{"model": <name>, "input": [<texts>]}`, response
//!   `{"data": [{"embedding": [<floats>]}, ...]}` in input order. The API key
//!   is read from the environment variable named by `api_key_env`
//!   (default `SOLAUDIT_API_KEY`) and sent as a bearer token.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EmbeddingError;
use crate::lexer;

pub const DEFAULT_DIM: usize = 1536;
pub const DEFAULT_API_KEY_ENV: &str = "SOLAUDIT_API_KEY";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// A finite, non-zero embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    LocalDeterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub dim: usize,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Initial retry delay; doubles on every attempt.
    pub backoff_ms: u64,
    /// Cap on concurrent remote requests.
    pub max_in_flight: usize,
    /// Texts per remote request.
    pub batch_size: usize,
    pub api_key_env: String,
    /// Explicit key; takes precedence over `api_key_env`.
    #[serde(skip)]
    pub api_key: Option<Secret>,
    /// Local provider only: drop Solidity comments before tokenizing.
    pub strip_comments: bool,
}

/// A credential that never shows up in debug output.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

/// `explicit`, else the non-empty value of the environment variable `env`.
pub(crate) fn resolve_key(explicit: Option<&Secret>, env: &str) -> Option<String> {
    explicit
        .map(|s| s.expose().to_string())
        .or_else(|| std::env::var(env).ok())
        .filter(|k| !k.is_empty())
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::LocalDeterministic,
            endpoint: None,
            model_name: None,
            dim: DEFAULT_DIM,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 4,
            batch_size: 64,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            api_key: None,
            strip_comments: false,
        }
    }
}

impl ProviderConfig {
    pub fn local(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn remote(endpoint: &str, model: &str, dim: usize) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.to_string()),
            model_name: Some(model.to_string()),
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim < 8 {
            return Err(EmbeddingError::InvalidConfig(format!("dim {} < 8", self.dim)));
        }
        if self.kind == ProviderKind::Remote && (self.endpoint.is_none() || self.model_name.is_none()) {
            return Err(EmbeddingError::InvalidConfig(
                "remote provider needs endpoint and model_name".into(),
            ));
        }
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    /// Equal to mapping [`Embedder::embed`] over `texts`; the first failing
    /// item is reported with its index.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.embed(t).map_err(|e| EmbeddingError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dim: usize,
    strip_comments: bool,
}

impl LocalHashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, strip_comments: false }
    }

    pub fn with_comment_stripping(mut self, strip: bool) -> Self {
        self.strip_comments = strip;
        self
    }
}

impl Embedder for LocalHashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let stripped;
        let text = if self.strip_comments {
            stripped = lexer::strip_comments(text);
            stripped.as_str()
        } else {
            text
        };
        let mut counts = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            counts[(fnv1a64(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        counts.iter_mut().for_each(|c| *c /= norm);
        EmbeddingVector::new(counts)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let results: Vec<_> = texts.par_iter().map(|t| self.embed(t)).collect();
        results
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                r.map_err(|e| EmbeddingError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

/// Blocking JSON POST with retries and exponential backoff.
#[derive(Debug)]
pub(crate) struct HttpJson {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    gate: Gate,
}

impl HttpJson {
    pub(crate) fn new(
        endpoint: &str,
        timeout: Duration,
        max_retries: u32,
        backoff: Duration,
        max_in_flight: usize,
        api_key: Option<String>,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.to_string(),
            api_key,
            max_retries,
            backoff,
            gate: Gate::new(max_in_flight),
        }
    }

    pub(crate) fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        body: &Req,
    ) -> Result<Resp, String> {
        let mut delay = self.backoff;
        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let result = self.gate.run(|| {
                let mut req = self.agent.post(&self.endpoint);
                if let Some(key) = &self.api_key {
                    req = req.header("Authorization", &format!("Bearer {key}"));
                }
                req.send_json(body)
                    .and_then(|mut resp| resp.body_mut().read_json::<Resp>())
            });
            match result {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("POST {} attempt {} failed: {e}", self.endpoint, attempt + 1);
                    last_err = e.to_string();
                }
            }
        }
        Err(last_err)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    http: HttpJson,
    model: String,
    dim: usize,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(config: &ProviderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let endpoint = config.endpoint.as_deref().unwrap_or_default();
        Ok(Self {
            http: HttpJson::new(
                endpoint,
                Duration::from_millis(config.timeout_ms),
                config.max_retries,
                Duration::from_millis(config.backoff_ms),
                config.max_in_flight,
                resolve_key(config.api_key.as_ref(), &config.api_key_env),
            ),
            model: config.model_name.clone().unwrap_or_default(),
            dim: config.dim,
            batch_size: config.batch_size.max(1),
        })
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let resp: EmbedResponse = self
            .http
            .post(&EmbedRequest { model: &self.model, input: texts })
            .map_err(EmbeddingError::ProviderUnavailable)?;
        if resp.data.len() != texts.len() {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        resp.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dim,
                        got: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if let Some(index) = texts.iter().position(|t| t.is_empty()) {
            return Err(EmbeddingError::Batch {
                index,
                source: Box::new(EmbeddingError::EmptyText),
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for (n, chunk) in texts.chunks(self.batch_size).enumerate() {
            let vectors = self.request(chunk).map_err(|e| EmbeddingError::Batch {
                index: n * self.batch_size,
                source: Box::new(e),
            })?;
            out.extend(vectors);
        }
        Ok(out)
    }
}

pub fn provider_from_config(config: &ProviderConfig) -> Result<Box<dyn Embedder>, EmbeddingError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::LocalDeterministic => Box::new(
            LocalHashEmbedder::new(config.dim).with_comment_stripping(config.strip_comments),
        ),
        ProviderKind::Remote => Box::new(RemoteEmbedder::new(config)?),
    })
}

pub fn embed(text: &str, config: &ProviderConfig) -> Result<EmbeddingVector, EmbeddingError> {
    provider_from_config(config)?.embed(text)
}

pub fn embed_batch(texts: &[&str], config: &ProviderConfig) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    provider_from_config(config)?.embed_batch(texts)
}
