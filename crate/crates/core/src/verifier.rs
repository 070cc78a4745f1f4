//! Three-layer reasoning verification of function slices.
//!
//! Each slice is checked by three sequential model calls: Syntax, then
//! Design Pattern, then Architecture. Every call opens with the layer's
//! step-back question, includes the slice and the knowledge-base exemplars
//! retrieved for it, and asks for a JSON array of findings. A finding's
//! severity comes from the CVSS-based [`SeverityTable`]; a layer's severity
//! is the worst of its findings, and the function's risk score is the mean
//! of the three layer severities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{ProviderError, VerifyError};
use crate::kb::{RetrievalHit, Threshold, VectorStore, DEFAULT_TOP_K};
use crate::llm::{ChatRequest, LlmProvider};
use crate::slicer::ContextSlice;
use crate::source::is_swc_id;

pub const EXEMPLAR_HEADING: &str = "### Retrieved exemplars";
const LAYER_MARKER: &str = "Current layer: ";
const FUNCTION_MARKER: &str = "Function: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerId {
    Syntax,
    DesignPattern,
    Architecture,
}

impl LayerId {
    pub const ALL: [LayerId; 3] = [LayerId::Syntax, LayerId::DesignPattern, LayerId::Architecture];

    pub fn name(self) -> &'static str {
        match self {
            LayerId::Syntax => "Syntax",
            LayerId::DesignPattern => "DesignPattern",
            LayerId::Architecture => "Architecture",
        }
    }

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn step_back_question(self) -> &'static str {
        match self {
            LayerId::Syntax => "What are the fundamental syntax-level security requirements?",
            LayerId::DesignPattern => "What design principles should this pattern follow?",
            LayerId::Architecture => "What are the system-level security implications?",
        }
    }

    fn focus(self) -> &'static str {
        match self {
            LayerId::Syntax => {
                "Check Solidity-specific constructs: visibility specifiers, low-level calls \
                 (call, delegatecall, send) and their return values, arithmetic, deprecated \
                 builtins, tx.origin, compiler pragmas."
            }
            LayerId::DesignPattern => {
                "Check how common Solidity patterns are applied: checks-effects-interactions \
                 ordering, access control, pull-over-push payments, guard conditions, event \
                 emission. Report anti-patterns."
            }
            LayerId::Architecture => {
                "Check how this function fits the contract as a whole: who can reach it, which \
                 state and external contracts it touches, trust boundaries, upgradeability, \
                 denial-of-service and gas exposure across the call topology."
            }
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer named in a system prompt built by [`build_prompt`].
pub fn prompt_layer(system: &str) -> Option<LayerId> {
    let line = system.lines().find_map(|l| l.strip_prefix(LAYER_MARKER))?;
    let name = line.split('(').nth(1)?.trim_end_matches(')');
    LayerId::from_name(name)
}

/// Target function named in a user prompt built by [`build_prompt`].
pub fn prompt_function(user: &str) -> Option<&str> {
    let line = user.lines().find_map(|l| l.strip_prefix(FUNCTION_MARKER))?;
    line.split_whitespace().next()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRange {
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFinding {
    pub layer: LayerId,
    pub swc_id: Option<String>,
    /// Quality category (e.g. "Readability") for findings without an SWC id.
    pub category: Option<String>,
    pub title: String,
    /// Normalized CVSS base score in `[0, 1]`.
    pub severity: f64,
    pub reason: String,
    pub code_location: Option<LineRange>,
    pub suggestions: Option<String>,
}

/// CVSS v3.1 base scores (0–10) per SWC id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    #[serde(default = "default_score")]
    pub default_score: f64,
    pub scores: BTreeMap<String, f64>,
}

fn default_score() -> f64 {
    5.0
}

const DEFAULT_SCORES: &[(&str, f64)] = &[
    ("SWC-100", 7.5),
    ("SWC-101", 7.5),
    ("SWC-102", 3.7),
    ("SWC-103", 3.1),
    ("SWC-104", 7.5),
    ("SWC-105", 9.1),
    ("SWC-106", 9.1),
    ("SWC-107", 9.1),
    ("SWC-108", 5.3),
    ("SWC-109", 7.5),
    ("SWC-110", 5.3),
    ("SWC-111", 5.3),
    ("SWC-112", 9.0),
    ("SWC-113", 7.5),
    ("SWC-114", 5.9),
    ("SWC-115", 8.1),
    ("SWC-116", 5.3),
    ("SWC-117", 7.5),
    ("SWC-118", 9.1),
    ("SWC-119", 5.3),
    ("SWC-120", 7.5),
    ("SWC-121", 7.5),
    ("SWC-122", 8.1),
    ("SWC-123", 5.3),
    ("SWC-124", 9.1),
    ("SWC-125", 5.3),
    ("SWC-126", 5.3),
    ("SWC-127", 9.1),
    ("SWC-128", 7.5),
    ("SWC-129", 5.3),
    ("SWC-130", 5.3),
    ("SWC-131", 3.1),
    ("SWC-132", 5.3),
    ("SWC-133", 7.5),
    ("SWC-134", 5.3),
    ("SWC-135", 3.1),
    ("SWC-136", 7.5),
];

impl Default for SeverityTable {
    fn default() -> Self {
        Self {
            default_score: default_score(),
            scores: DEFAULT_SCORES.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl SeverityTable {
    pub fn validate(&self) -> Result<(), String> {
        let bad = |v: f64| !(0.0..=10.0).contains(&v);
        if bad(self.default_score) {
            return Err(format!("default score {} outside [0, 10]", self.default_score));
        }
        if let Some((k, v)) = self.scores.iter().find(|(_, &v)| bad(v)) {
            return Err(format!("score for {k} ({v}) outside [0, 10]"));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let table: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn cvss(&self, swc_id: &str) -> Option<f64> {
        self.scores.get(swc_id).copied()
    }

    /// Normalized severity. A mapped SWC id always wins over the model's own
    /// claim; a claim in `[0, 1]` is taken as normalized, one in `(1, 10]` as
    /// a CVSS base score; otherwise the table default applies.
    pub fn resolve(&self, swc_id: Option<&str>, claimed: Option<f64>) -> f64 {
        if let Some(score) = swc_id.and_then(|id| self.cvss(id)) {
            return score / 10.0;
        }
        match claimed {
            Some(c) if (0.0..=1.0).contains(&c) => c,
            Some(c) if c > 1.0 && c <= 10.0 => c / 10.0,
            _ => self.default_score / 10.0,
        }
    }
}

/// Prompt pair for one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

const OUTPUT_GRAMMAR: &str = r#"Respond with a JSON array and nothing else. Each element describes one bad practice:
{"swc_id": "SWC-<number>" or null, "category": "<quality category when there is no SWC id>", "title": "<short title>", "reason": "<why this is a problem>", "location": "L<start>-L<end>", "severity": <optional number in [0, 1]>, "suggestions": "<how to fix it>"}
Locations are source-file line numbers inside the target function. Answer [] when this layer finds nothing."#;

pub fn build_prompt(layer: LayerId, slice: &ContextSlice, retrieved: &[RetrievalHit<'_>]) -> Prompt {
    let system = format!(
        "You are a smart contract auditor looking for bad practices in Solidity code, both \
         security weaknesses (classified by SWC id) and code-quality problems.\n\
         You reason in three layers: Syntax, DesignPattern, Architecture. Within a layer, first \
         answer its step-back question in general terms, then check the concrete code against \
         the principles you stated. Retrieved exemplars are known bad practices similar to the \
         target; use them as reference, but report only what is present in the target.\n\
         \n\
         {LAYER_MARKER}Layer {} ({})\n\
         Step-back question: {}\n\
         Focus: {}\n\
         \n\
         {OUTPUT_GRAMMAR}\n",
        layer.number(),
        layer.name(),
        layer.step_back_question(),
        layer.focus(),
    );

    let f = &slice.main_function;
    let m = &slice.metadata;
    let list = |items: &[String]| {
        if items.is_empty() {
            "none".to_string()
        } else {
            items.join(", ")
        }
    };
    let tags: Vec<String> = m.swc_types.iter().cloned().collect();
    let mut user = format!(
        "### Target\n\
         File: {}\n\
         Contract: {}\n\
         {FUNCTION_MARKER}{} (lines {}-{})\n\
         Kind: {}\n\
         Known SWC tags: {}\n\
         Called functions: {}\n\
         Referenced state variables: {}\n\
         Triggered events: {}\n\
         \n\
         ```solidity\n{}\n```\n\n",
        m.source_file,
        m.contract_name,
        f.name,
        f.start_line,
        f.end_line,
        f.kind,
        list(&tags),
        list(&m.called_functions),
        list(&m.referenced_state_vars),
        list(&m.triggered_events),
        slice.assembled_text,
    );
    user.push_str(EXEMPLAR_HEADING);
    user.push('\n');
    if retrieved.is_empty() {
        user.push_str("none\n");
    }
    for hit in retrieved {
        let swc: Vec<&str> = hit.entry.metadata.swc_types.iter().map(String::as_str).collect();
        user.push_str(&format!(
            "\n#{} similarity {:.4} [{}] {}\n```solidity\n{}\n```\n",
            hit.rank,
            hit.similarity,
            if swc.is_empty() { "untagged".to_string() } else { swc.join(", ") },
            hit.entry.entry_id,
            hit.entry.slice_text,
        ));
    }
    user.push_str(&format!(
        "\n### Task\n{}\nThen list the bad practices this layer finds in the target function.\n",
        layer.step_back_question()
    ));
    Prompt { system, user }
}

/// Audit trail of one model call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmExchange {
    pub layer: LayerId,
    pub system_prompt: String,
    pub user_prompt: String,
    pub raw_response: String,
    pub parsed: Vec<LayerFinding>,
    pub warnings: Vec<String>,
    pub provider: String,
    pub duration_ms: u64,
}

// Timing is observational; two exchanges are the same if everything the
// model saw and said matches.
impl PartialEq for LlmExchange {
    fn eq(&self, other: &Self) -> bool {
        self.layer == other.layer
            && self.system_prompt == other.system_prompt
            && self.user_prompt == other.user_prompt
            && self.raw_response == other.raw_response
            && self.parsed == other.parsed
            && self.warnings == other.warnings
            && self.provider == other.provider
    }
}

/// First balanced `[...]` in `text`, honouring JSON string quoting.
pub fn extract_json_array(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(rel) = text[from..].find('[') {
        let start = from + rel;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'[' => depth += 1,
                b']' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &text[start..=i];
                        if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        from = start + 1;
    }
    None
}

fn parse_location(value: &serde_json::Value) -> Option<LineRange> {
    use serde_json::Value;
    let range = |s: usize, e: usize| (s >= 1 && e >= s).then_some(LineRange { start_line: s, end_line: e });
    match value {
        Value::Number(n) => {
            let n = n.as_u64()? as usize;
            range(n, n)
        }
        Value::String(s) => {
            let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            let mut parts = cleaned.split('-').map(|p| p.trim_start_matches(['L', 'l']));
            let start: usize = parts.next()?.parse().ok()?;
            let end: usize = match parts.next() {
                Some(p) => p.parse().ok()?,
                None => start,
            };
            range(start, end)
        }
        Value::Array(items) if items.len() == 2 => {
            range(items[0].as_u64()? as usize, items[1].as_u64()? as usize)
        }
        Value::Object(map) => {
            let get = |keys: &[&str]| keys.iter().find_map(|k| map.get(*k)?.as_u64()).map(|n| n as usize);
            let start = get(&["start_line", "start"])?;
            range(start, get(&["end_line", "end"]).unwrap_or(start))
        }
        _ => None,
    }
}

fn normalize_swc(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if is_swc_id(raw) {
        return Some(raw.to_string());
    }
    let upper = raw.to_ascii_uppercase();
    let digits = upper.strip_prefix("SWC-").or_else(|| upper.strip_prefix("SWC")).unwrap_or(&upper);
    let candidate = format!("SWC-{}", digits.trim_start_matches([' ', '-']));
    is_swc_id(&candidate).then_some(candidate)
}

/// Findings and warnings parsed from one raw model response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub findings: Vec<LayerFinding>,
    pub warnings: Vec<String>,
}

/// Parse a model response into findings for `layer`.
///
/// Blank responses and empty arrays yield no findings. Items that are not
/// objects or lack a title are dropped with a warning. The response is
/// malformed when no array can be found, or when an array had items but none
/// of them parsed.
pub fn parse_findings(raw: &str, layer: LayerId, table: &SeverityTable) -> Result<ParsedResponse, ProviderError> {
    let mut warnings = Vec::new();
    if raw.trim().is_empty() {
        return Ok(ParsedResponse { findings: Vec::new(), warnings });
    }
    let array = extract_json_array(raw)
        .ok_or_else(|| ProviderError::MalformedResponse("no JSON array in response".into()))?;
    let items: Vec<serde_json::Value> =
        serde_json::from_str(array).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    let mut findings = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let Some(obj) = item.as_object() else {
            warnings.push(format!("item {i}: not an object"));
            continue;
        };
        let text = |keys: &[&str]| {
            keys.iter()
                .find_map(|k| obj.get(*k).and_then(|v| v.as_str()))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
        };
        let Some(title) = text(&["title", "Title"]) else {
            warnings.push(format!("item {i}: missing title"));
            continue;
        };
        let swc_id = match text(&["swc_id", "swc", "SWC", "Type"]) {
            Some(raw_id) => {
                let id = normalize_swc(&raw_id);
                if id.is_none() {
                    warnings.push(format!("item {i}: `{raw_id}` is not an SWC id"));
                }
                id
            }
            None => None,
        };
        let claimed = obj.get("severity").and_then(|v| v.as_f64());
        let code_location = obj
            .get("location")
            .or_else(|| obj.get("Location"))
            .and_then(|v| {
                let loc = parse_location(v);
                if loc.is_none() {
                    warnings.push(format!("item {i}: unreadable location {v}"));
                }
                loc
            });
        findings.push(LayerFinding {
            layer,
            severity: table.resolve(swc_id.as_deref(), claimed),
            swc_id,
            category: text(&["category", "Category"]),
            title,
            reason: text(&["reason", "Reason"]).unwrap_or_default(),
            code_location,
            suggestions: text(&["suggestions", "Suggestions", "suggestion"]),
        });
    }
    if findings.is_empty() && !items.is_empty() {
        return Err(ProviderError::MalformedResponse(format!(
            "none of {} items parsed: {}",
            items.len(),
            warnings.join("; ")
        )));
    }
    Ok(ParsedResponse { findings, warnings })
}

/// Run one verification layer against `provider`.
pub fn run_layer(
    layer: LayerId,
    slice: &ContextSlice,
    retrieved: &[RetrievalHit<'_>],
    provider: &dyn LlmProvider,
    table: &SeverityTable,
) -> Result<(Vec<LayerFinding>, LlmExchange), ProviderError> {
    let prompt = build_prompt(layer, slice, retrieved);
    let request = ChatRequest {
        system: prompt.system,
        user: prompt.user,
    };
    let started = Instant::now();
    let raw = provider.complete(&request)?;
    let duration_ms = started.elapsed().as_millis() as u64;
    let parsed = parse_findings(&raw, layer, table)?;
    for w in &parsed.warnings {
        log::warn!("{} layer {}: {w}", slice.main_function.name, layer);
    }
    let exchange = LlmExchange {
        layer,
        system_prompt: request.system,
        user_prompt: request.user,
        raw_response: raw,
        parsed: parsed.findings.clone(),
        warnings: parsed.warnings,
        provider: provider.name().to_string(),
        duration_ms,
    };
    Ok((parsed.findings, exchange))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

/// Severity of `layer` from its findings: the maximum (or mean), 0 when none.
pub fn aggregate_layer_severity(findings: &[LayerFinding], layer: LayerId, mode: Aggregation) -> f64 {
    let sev: Vec<f64> = findings.iter().filter(|f| f.layer == layer).map(|f| f.severity).collect();
    if sev.is_empty() {
        return 0.0;
    }
    match mode {
        Aggregation::Max => sev.iter().copied().fold(0.0, f64::max),
        Aggregation::Mean => sev.iter().sum::<f64>() / sev.len() as f64,
    }
}

fn layer_values(layer_severity: &BTreeMap<LayerId, f64>) -> Result<[f64; 3], VerifyError> {
    let mut out = [0.0; 3];
    for (i, layer) in LayerId::ALL.into_iter().enumerate() {
        out[i] = *layer_severity
            .get(&layer)
            .ok_or_else(|| VerifyError::MissingLayer(layer.name().to_string()))?;
    }
    Ok(out)
}

/// Unweighted mean of the three layer severities.
pub fn risk_score(layer_severity: &BTreeMap<LayerId, f64>) -> Result<f64, VerifyError> {
    let [a, b, c] = layer_values(layer_severity)?;
    Ok((a + b + c) / 3.0)
}

/// Weighted mean; `weights` are normalized by their sum.
pub fn risk_score_weighted(layer_severity: &BTreeMap<LayerId, f64>, weights: [f64; 3]) -> Result<f64, VerifyError> {
    let s = layer_values(layer_severity)?;
    let total: f64 = weights.iter().sum();
    Ok(s.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>() / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFailure {
    /// Layer name, or `retrieval`.
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub entry_id: String,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionAudit {
    pub function_name: String,
    pub contract_name: String,
    pub source_file: String,
    pub start_line: usize,
    pub end_line: usize,
    pub findings: Vec<LayerFinding>,
    pub layer_severity: BTreeMap<LayerId, f64>,
    pub risk_score: f64,
    pub retrieved: Vec<RetrievedRef>,
    pub exchanges: Vec<LlmExchange>,
    pub errors: Vec<LayerFailure>,
}

impl FunctionAudit {
    /// SWC ids confirmed by any layer.
    pub fn confirmed_swc_ids(&self) -> BTreeSet<String> {
        self.findings.iter().filter_map(|f| f.swc_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub top_k: usize,
    pub threshold: Threshold,
    pub aggregation: Aggregation,
    /// Layer weights for the risk score; `None` is the plain mean.
    pub weights: Option<[f64; 3]>,
    /// Slices verified concurrently by [`Verifier::verify_all`].
    pub parallelism: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            threshold: Threshold::default(),
            aggregation: Aggregation::Max,
            weights: None,
            parallelism: 1,
        }
    }
}

/// Retrieval plus three-layer verification over a read-only knowledge base.
pub struct Verifier<'a> {
    pub kb: &'a VectorStore,
    pub embedder: &'a dyn Embedder,
    pub provider: &'a dyn LlmProvider,
    pub table: &'a SeverityTable,
    pub config: VerifierConfig,
}

impl Verifier<'_> {
    fn retrieve(&self, slice: &ContextSlice) -> Result<Vec<RetrievalHit<'_>>, String> {
        if self.kb.is_empty() {
            return Ok(Vec::new());
        }
        let probe = self.embedder.embed(&slice.assembled_text).map_err(|e| e.to_string())?;
        let mut hits = self.kb.query_top_k(&probe, self.config.top_k).map_err(|e| e.to_string())?;
        hits.retain(|h| h.similarity > self.config.threshold.theta());
        Ok(hits)
    }

    /// Retrieve once, then run the three layers in order. A failing layer
    /// contributes severity 0 and an entry in `errors`; the audit is always
    /// produced.
    pub fn verify_function(&self, slice: &ContextSlice) -> FunctionAudit {
        let mut errors = Vec::new();
        let hits = self.retrieve(slice).unwrap_or_else(|e| {
            log::warn!("retrieval failed for {}: {e}", slice.main_function.name);
            errors.push(LayerFailure {
                stage: "retrieval".into(),
                message: e,
            });
            Vec::new()
        });
        let mut findings = Vec::new();
        let mut exchanges = Vec::new();
        for layer in LayerId::ALL {
            match run_layer(layer, slice, &hits, self.provider, self.table) {
                Ok((mut f, exchange)) => {
                    findings.append(&mut f);
                    exchanges.push(exchange);
                }
                Err(e) => {
                    log::warn!("layer {layer} failed for {}: {e}", slice.main_function.name);
                    errors.push(LayerFailure {
                        stage: layer.name().into(),
                        message: e.to_string(),
                    });
                }
            }
        }
        let layer_severity: BTreeMap<LayerId, f64> = LayerId::ALL
            .into_iter()
            .map(|l| (l, aggregate_layer_severity(&findings, l, self.config.aggregation)))
            .collect();
        let risk = match self.config.weights {
            Some(w) => risk_score_weighted(&layer_severity, w),
            None => risk_score(&layer_severity),
        }
        .expect("all layers present");
        let f = &slice.main_function;
        FunctionAudit {
            function_name: f.name.clone(),
            contract_name: slice.metadata.contract_name.clone(),
            source_file: slice.metadata.source_file.clone(),
            start_line: f.start_line,
            end_line: f.end_line,
            findings,
            layer_severity,
            risk_score: risk,
            retrieved: hits
                .iter()
                .map(|h| RetrievedRef {
                    entry_id: h.entry.entry_id.clone(),
                    similarity: h.similarity,
                    rank: h.rank,
                })
                .collect(),
            exchanges,
            errors,
        }
    }

    /// Verify many slices with at most `config.parallelism` in flight;
    /// results keep input order.
    pub fn verify_all(&self, slices: &[ContextSlice]) -> Vec<FunctionAudit> {
        if self.config.parallelism <= 1 {
            return slices.iter().map(|s| self.verify_function(s)).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.config.parallelism).build() {
            Ok(pool) => pool.install(|| slices.par_iter().map(|s| self.verify_function(s)).collect()),
            Err(_) => slices.iter().map(|s| self.verify_function(s)).collect(),
        }
    }
}
