//! Retrieval robustness evaluation.
//!
//! Known-bad functions are mutated at source level, re-sliced, embedded and
//! queried against the knowledge base; the rank of the unmutated original
//! gives Recall@K and MRR. A threshold sweep replays the same probes while
//! discarding hits at or below θ. Classification metrics cover the binary
//! detection setting.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::EvalError;
use crate::kb::VectorStore;
use crate::lexer::{self, identifiers, is_elementary_type, is_ident_char, is_reserved, matching_brace};
use crate::slicer::{assemble_with_graph, build_call_graph, build_corpus, DepthBound};
use crate::source::{parse_all, parse_contract, FunctionKind, SourceUnit};

/// Statement inserted by [`MutationKind::DeadCode`].
pub const DEAD_CODE_TEMPLATE: &str = "if (false) { revert(); }";
pub const RECALL_KS: [usize; 4] = [1, 3, 5, 10];
pub const DEFAULT_THETAS: [f64; 5] = [0.70, 0.80, 0.85, 0.90, 0.95];

const COMMENT_POOL: &[&str] = &[
    "// reviewed",
    "// keep in sync with the deployment script",
    "// note: state update below",
    "// checked by the caller",
    "// TODO: revisit gas usage",
    "// see design notes",
    "// invariant holds here",
    "// legacy behaviour retained",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutationKind {
    VariableRename,
    DeadCode,
    CommentAdd,
    CommentRemove,
    Combined,
}

impl MutationKind {
    pub const ALL: [MutationKind; 5] = [
        MutationKind::VariableRename,
        MutationKind::DeadCode,
        MutationKind::CommentAdd,
        MutationKind::CommentRemove,
        MutationKind::Combined,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationSpec {
    pub kind: MutationKind,
    pub rename_fraction: f64,
    pub dead_blocks: usize,
    pub comments_added: usize,
    pub comment_remove_fraction: f64,
    pub seed: u64,
}

impl Default for MutationSpec {
    fn default() -> Self {
        Self::new(MutationKind::Combined, 0)
    }
}

impl MutationSpec {
    pub fn new(kind: MutationKind, seed: u64) -> Self {
        Self {
            kind,
            rename_fraction: 0.7,
            dead_blocks: 3,
            comments_added: 5,
            comment_remove_fraction: 0.8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.rename_fraction) || !frac(self.comment_remove_fraction) {
            return Err(EvalError::Invalid("mutation fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mutated text. `applied` is false when there was nothing to mutate, in
/// which case `text` is the input unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationOutcome {
    pub text: String,
    pub applied: bool,
    /// Identifiers renamed, blocks or comments inserted, comments removed.
    pub edits: usize,
}

impl MutationOutcome {
    fn unchanged(source: &str) -> Self {
        Self {
            text: source.to_string(),
            applied: false,
            edits: 0,
        }
    }
}

fn ceil_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Byte offset of `f.body_text` in `source`.
fn function_offset(source: &str, line_starts: &[usize], start_line: usize, body: &str) -> Option<usize> {
    let from = *line_starts.get(start_line - 1)?;
    source[from..].find(body).map(|i| from + i)
}

/// Top-level comma-separated pieces of a parameter list.
fn split_params(list: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut last = 0;
    for (i, b) in list.bytes().enumerate() {
        match b {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b',' if depth == 0 => {
                out.push(&list[last..i]);
                last = i + 1;
            }
            _ => {}
        }
    }
    out.push(&list[last..]);
    out
}

fn paren_list(text: &str, open: usize) -> Option<&str> {
    let mut depth = 0;
    for (i, b) in text.bytes().enumerate().skip(open) {
        match b {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open + 1..i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn param_names(list: &str, out: &mut BTreeSet<String>) {
    for param in split_params(list) {
        let idents: Vec<&str> = identifiers(param)
            .into_iter()
            .map(|i| i.text)
            .filter(|t| !matches!(*t, "memory" | "storage" | "calldata" | "indexed" | "payable"))
            .collect();
        if idents.len() >= 2 {
            let name = idents[idents.len() - 1];
            if !is_reserved(name) {
                out.insert(name.to_string());
            }
        }
    }
}

fn local_names(block: &str, out: &mut BTreeSet<String>) {
    let idents = identifiers(block);
    for (i, id) in idents.iter().enumerate() {
        if id.after_dot || is_reserved(id.text) {
            continue;
        }
        let rest = block[id.start + id.text.len()..].trim_start();
        let assigns = rest.starts_with('=') && !rest.starts_with("==") && !rest.starts_with("=>");
        let terminates = rest.starts_with(';');
        if !(assigns || terminates) {
            continue;
        }
        let before = block[..id.start].trim_end();
        let typed = before.ends_with(']')
            || i.checked_sub(1).is_some_and(|p| {
                let prev = &idents[p];
                prev.start + prev.text.len() == before.len()
                    && (!is_reserved(prev.text)
                        || is_elementary_type(prev.text)
                        || matches!(prev.text, "memory" | "storage" | "calldata" | "payable"))
            });
        if assigns || typed {
            out.insert(id.text.to_string());
        }
    }
}

/// Variables eligible for renaming: state variables, parameters, named
/// returns and function locals, sorted. Names that also appear after a `.`
/// anywhere in the file are left alone, as are function, modifier, event
/// and contract names.
pub fn rename_candidates(source: &str) -> Result<Vec<String>, EvalError> {
    let units = parse_all(source, "")?;
    let lexed = lexer::lex(source);
    let blank = &lexed.blanked;
    let mut names = BTreeSet::new();
    let mut excluded: HashSet<&str> = HashSet::new();
    for id in identifiers(blank) {
        if id.after_dot {
            excluded.insert(id.text);
        }
    }
    for unit in &units {
        excluded.insert(&unit.contract_name);
        for s in &unit.state_vars {
            names.insert(s.name.clone());
        }
        for e in &unit.events {
            excluded.insert(&e.name);
        }
        for f in &unit.functions {
            excluded.insert(&f.name);
            let Some(at) = function_offset(source, &lexed.line_starts, f.start_line, &f.body_text) else {
                continue;
            };
            let text = &blank[at..at + f.body_text.len()];
            let sig = &text[..f.block_offset];
            if f.kind != FunctionKind::Modifier || sig.contains('(') {
                if let Some(open) = sig.find('(') {
                    if let Some(list) = paren_list(sig, open) {
                        param_names(list, &mut names);
                    }
                }
            }
            if let Some(r) = sig.find("returns") {
                if let Some(open) = sig[r..].find('(') {
                    if let Some(list) = paren_list(sig, r + open) {
                        param_names(list, &mut names);
                    }
                }
            }
            local_names(&text[f.block_offset..], &mut names);
        }
    }
    Ok(names.into_iter().filter(|n| !excluded.contains(n.as_str()) && !is_reserved(n)).collect())
}

fn variable_rename(source: &str, fraction: f64, seed: u64) -> Result<MutationOutcome, EvalError> {
    let mut candidates = rename_candidates(source)?;
    if candidates.is_empty() {
        return Ok(MutationOutcome::unchanged(source));
    }
    let n = ceil_count(fraction, candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let lexed = lexer::lex(source);
    let idents = identifiers(&lexed.blanked);
    let existing: HashSet<&str> = idents.iter().map(|i| i.text).collect();
    let mut mapping = BTreeMap::new();
    let mut counter = 0usize;
    for name in candidates.into_iter().take(n) {
        let fresh = loop {
            let c = format!("v_{counter}");
            counter += 1;
            if !existing.contains(c.as_str()) {
                break c;
            }
        };
        mapping.insert(name, fresh);
    }
    let mut out = String::with_capacity(source.len());
    let mut last = 0;
    for id in &idents {
        if id.after_dot {
            continue;
        }
        if let Some(fresh) = mapping.get(id.text) {
            out.push_str(&source[last..id.start]);
            out.push_str(fresh);
            last = id.start + id.text.len();
        }
    }
    out.push_str(&source[last..]);
    Ok(MutationOutcome {
        text: out,
        applied: n > 0,
        edits: n,
    })
}

fn indentation(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

/// Line indices (0-based) after which a statement may be inserted.
fn statement_boundaries(source: &str, units: &[SourceUnit]) -> Vec<usize> {
    let lexed = lexer::lex(source);
    let blank = &lexed.blanked;
    let blank_lines: Vec<&str> = blank.split('\n').collect();
    let mut assembly: Vec<(usize, usize)> = Vec::new();
    for id in identifiers(blank).into_iter().filter(|i| i.text == "assembly") {
        if let Some(open) = blank[id.start..].find('{').map(|o| id.start + o) {
            if let Some(close) = matching_brace(blank, open) {
                assembly.push((lexed.line_of(id.start), lexed.line_of(close)));
            }
        }
    }
    let mut out = BTreeSet::new();
    for unit in units {
        for f in &unit.functions {
            let Some(at) = function_offset(source, &lexed.line_starts, f.start_line, &f.body_text) else {
                continue;
            };
            let open_line = lexed.line_of(at + f.block_offset);
            for line in open_line..f.end_line {
                if assembly.iter().any(|&(s, e)| line >= s && line <= e) {
                    continue;
                }
                let text = blank_lines[line - 1].trim_end();
                let ok = if text.ends_with(';') {
                    true
                } else if let Some(head) = text.strip_suffix('{') {
                    let prev = head.trim_end().chars().next_back();
                    prev.is_none_or(|c| c == ')' || is_ident_char(c))
                } else {
                    false
                };
                let next_is_else = blank_lines[line..]
                    .iter()
                    .map(|l| l.trim())
                    .find(|l| !l.is_empty())
                    .is_some_and(|l| l.starts_with("else"));
                if ok && !next_is_else {
                    out.insert(line - 1);
                }
            }
        }
    }
    out.into_iter().collect()
}

fn dead_code(source: &str, blocks: usize, seed: u64) -> Result<MutationOutcome, EvalError> {
    let units = parse_all(source, "")?;
    let mut spots = statement_boundaries(source, &units);
    if spots.is_empty() || blocks == 0 {
        return Ok(MutationOutcome::unchanged(source));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spots.shuffle(&mut rng);
    let mut chosen: Vec<usize> = spots.iter().cycle().take(blocks).copied().collect();
    chosen.sort_unstable();
    let lines: Vec<&str> = source.split('\n').collect();
    let mut out: Vec<String> = Vec::with_capacity(lines.len() + blocks);
    let mut next = chosen.iter().peekable();
    for (i, line) in lines.iter().enumerate() {
        out.push(line.to_string());
        while next.peek() == Some(&&i) {
            next.next();
            let mut indent = indentation(line).to_string();
            if line.trim_end().ends_with('{') {
                indent.push_str("    ");
            }
            out.push(format!("{indent}{DEAD_CODE_TEMPLATE}"));
        }
    }
    Ok(MutationOutcome {
        text: out.join("\n"),
        applied: true,
        edits: blocks,
    })
}

fn comment_add(source: &str, count: usize, seed: u64) -> Result<MutationOutcome, EvalError> {
    parse_all(source, "")?;
    let lexed = lexer::lex(source);
    let lines: Vec<&str> = source.split('\n').collect();
    // A line start inside a block comment is not a safe spot.
    let spots: Vec<usize> = (0..lines.len())
        .filter(|&i| {
            let off = lexed.line_starts[i];
            !lexed.comments.iter().any(|c| c.start < off && off < c.end)
        })
        .collect();
    if count == 0 || spots.is_empty() {
        return Ok(MutationOutcome::unchanged(source));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inserts: Vec<(usize, &str)> = (0..count)
        .map(|_| {
            let at = spots[rng.random_range(0..spots.len())];
            (at, COMMENT_POOL[rng.random_range(0..COMMENT_POOL.len())])
        })
        .collect();
    inserts.sort_by_key(|&(at, _)| at);
    let mut out: Vec<String> = Vec::with_capacity(lines.len() + count);
    let mut pending = inserts.iter().peekable();
    for (i, line) in lines.iter().enumerate() {
        while let Some(&(_, text)) = pending.next_if(|(at, _)| *at == i) {
            out.push(format!("{}{text}", indentation(line)));
        }
        out.push(line.to_string());
    }
    Ok(MutationOutcome {
        text: out.join("\n"),
        applied: true,
        edits: count,
    })
}

fn comment_remove(source: &str, fraction: f64, seed: u64) -> Result<MutationOutcome, EvalError> {
    parse_all(source, "")?;
    let lexed = lexer::lex(source);
    let total = lexed.comments.len();
    if total == 0 {
        return Ok(MutationOutcome::unchanged(source));
    }
    let n = ceil_count(fraction, total);
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order.into_iter().take(n).collect();
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    let mut text = source.to_string();
    for idx in chosen {
        let c = &lexed.comments[idx];
        text.replace_range(c.start..c.end, "");
        let pos = c.start;
        let line_start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
        let line_end = text[pos..].find('\n').map_or(text.len(), |i| pos + i);
        if text[line_start..line_end].trim().is_empty() {
            let (s, e) = if line_end < text.len() {
                (line_start, line_end + 1)
            } else if line_start > 0 {
                (line_start - 1, line_end)
            } else {
                (line_start, line_end)
            };
            text.replace_range(s..e, "");
        } else {
            let before = text[..pos].chars().next_back();
            let after = text[pos..].chars().next();
            if before.is_some_and(is_ident_char) && after.is_some_and(is_ident_char) {
                text.insert(pos, ' ');
            }
        }
    }
    Ok(MutationOutcome {
        text,
        applied: n > 0,
        edits: n,
    })
}

/// Apply `spec` to `source`. The result always re-parses.
pub fn mutate(source: &str, spec: &MutationSpec) -> Result<MutationOutcome, EvalError> {
    spec.validate()?;
    let outcome = match spec.kind {
        MutationKind::VariableRename => variable_rename(source, spec.rename_fraction, spec.seed)?,
        MutationKind::DeadCode => dead_code(source, spec.dead_blocks, spec.seed)?,
        MutationKind::CommentAdd => comment_add(source, spec.comments_added, spec.seed)?,
        MutationKind::CommentRemove => comment_remove(source, spec.comment_remove_fraction, spec.seed)?,
        MutationKind::Combined => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let seeds: [u64; 4] = std::array::from_fn(|_| rng.next_u64());
            let a = variable_rename(source, spec.rename_fraction, seeds[0])?;
            let b = dead_code(&a.text, spec.dead_blocks, seeds[1])?;
            let c = comment_add(&b.text, spec.comments_added, seeds[2])?;
            let d = comment_remove(&c.text, spec.comment_remove_fraction, seeds[3])?;
            MutationOutcome {
                applied: a.applied || b.applied || c.applied || d.applied,
                edits: a.edits + b.edits + c.edits + d.edits,
                text: d.text,
            }
        }
    };
    parse_all(&outcome.text, "")
        .map_err(|e| EvalError::Invalid(format!("mutant no longer parses: {e}")))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// k → percentage of probes whose original ranks within the top k.
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    /// Percentage of probes with at least one surviving hit.
    pub retention_rate: f64,
    pub n_samples: usize,
}

impl RetrievalMetrics {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at.get(&k).copied().unwrap_or(0.0)
    }
}

/// Metrics from 1-based ranks of the original (`None` when it was not
/// retrieved) and the number of probes that kept at least one hit.
pub fn metrics_from_ranks(ranks: &[Option<usize>], retained: usize) -> Result<RetrievalMetrics, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::UndefinedMetric("no samples"));
    }
    let n = ranks.len() as f64;
    let recall_at = RECALL_KS
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            (k, 100.0 * hits as f64 / n)
        })
        .collect();
    let rr_sum: f64 = ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum();
    Ok(RetrievalMetrics {
        recall_at,
        mrr: rr_sum / n,
        retention_rate: 100.0 * retained as f64 / n,
        n_samples: ranks.len(),
    })
}

/// One known-bad function whose unmutated slice is in the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub entry_id: String,
    pub file_name: String,
    pub source: String,
    pub contract_name: String,
    /// Position in the contract's function list (stable under mutation).
    pub function_index: usize,
}

/// Pick up to `n` samples, seeded, among functions of `sources` (name, text)
/// whose slice id is an entry of `kb`.
pub fn samples_from_sources(
    kb: &VectorStore,
    sources: &[(String, String)],
    bound: DepthBound,
    n: usize,
    seed: u64,
) -> Vec<EvalSample> {
    let mut pool = Vec::new();
    for (file, text) in sources {
        let Ok(units) = parse_all(text, file) else {
            log::warn!("{file}: skipped, does not parse");
            continue;
        };
        for unit in &units {
            let slices = build_corpus(std::slice::from_ref(unit), bound, false);
            for slice in slices {
                let id = slice.slice_id();
                if !kb.contains(&id) {
                    continue;
                }
                let Some(index) = unit.functions.iter().position(|f| *f == slice.main_function) else {
                    continue;
                };
                pool.push(EvalSample {
                    entry_id: id,
                    file_name: file.clone(),
                    source: text.clone(),
                    contract_name: unit.contract_name.clone(),
                    function_index: index,
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n);
    pool
}

fn sample_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mutate, re-slice and embed one sample.
pub fn probe_vector(
    sample: &EvalSample,
    spec: &MutationSpec,
    embedder: &dyn Embedder,
    bound: DepthBound,
) -> Result<EmbeddingVector, EvalError> {
    let mutant = mutate(&sample.source, spec)?;
    let unit = parse_contract(&mutant.text, &sample.file_name, &sample.contract_name)?;
    let graph = build_call_graph(&unit);
    let slice = assemble_with_graph(&unit, &graph, sample.function_index, bound)?;
    Ok(embedder.embed(&slice.assembled_text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub target: String,
    pub vector: EmbeddingVector,
}

/// Probes for every sample under `spec`; each sample gets its own seed
/// derived from `spec.seed` and its position. Failed samples are logged and
/// left out.
pub fn build_probes(
    samples: &[EvalSample],
    spec: &MutationSpec,
    embedder: &dyn Embedder,
    bound: DepthBound,
) -> (Vec<Probe>, usize) {
    let results: Vec<Option<Probe>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let spec = MutationSpec {
                seed: sample_seed(spec.seed, i),
                ..spec.clone()
            };
            match probe_vector(s, &spec, embedder, bound) {
                Ok(vector) => Some(Probe {
                    target: s.entry_id.clone(),
                    vector,
                }),
                Err(e) => {
                    log::warn!("sample {} excluded: {e}", s.entry_id);
                    None
                }
            }
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    (results.into_iter().flatten().collect(), failed)
}

fn rank_of(kb: &VectorStore, probe: &Probe, k_max: usize, theta: Option<f64>) -> Result<(Option<usize>, bool), EvalError> {
    let mut hits = kb
        .query_top_k(&probe.vector, k_max)
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    if let Some(t) = theta {
        hits.retain(|h| h.similarity > t);
    }
    let rank = hits.iter().find(|h| h.entry.entry_id == probe.target).map(|h| h.rank);
    Ok((rank, !hits.is_empty()))
}

fn evaluate(kb: &VectorStore, probes: &[Probe], k_max: usize, theta: Option<f64>) -> Result<RetrievalMetrics, EvalError> {
    let mut ranks = Vec::with_capacity(probes.len());
    let mut retained = 0;
    for p in probes {
        let (rank, any) = rank_of(kb, p, k_max, theta)?;
        ranks.push(rank);
        retained += usize::from(any);
    }
    metrics_from_ranks(&ranks, retained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub spec: MutationSpec,
    pub metrics: RetrievalMetrics,
    pub failed_samples: usize,
}

/// Recall@K and MRR of the original entries under each mutation spec.
pub fn robustness_eval(
    kb: &VectorStore,
    samples: &[EvalSample],
    specs: &[MutationSpec],
    k_max: usize,
    embedder: &dyn Embedder,
    bound: DepthBound,
) -> Result<Vec<RobustnessResult>, EvalError> {
    specs
        .iter()
        .map(|spec| {
            spec.validate()?;
            let (probes, failed) = build_probes(samples, spec, embedder, bound);
            Ok(RobustnessResult {
                spec: spec.clone(),
                metrics: evaluate(kb, &probes, k_max, None)?,
                failed_samples: failed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub theta: f64,
    pub metrics: RetrievalMetrics,
}

/// Metrics per θ over hits with similarity strictly above θ.
pub fn threshold_sweep(kb: &VectorStore, probes: &[Probe], thetas: &[f64], k_max: usize) -> Result<Vec<ThresholdRow>, EvalError> {
    if thetas.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Invalid("thetas must be sorted ascending".into()));
    }
    if thetas.iter().any(|t| !t.is_finite()) {
        return Err(EvalError::Invalid("thetas must be finite".into()));
    }
    thetas
        .iter()
        .map(|&theta| {
            Ok(ThresholdRow {
                theta,
                metrics: evaluate(kb, probes, k_max, Some(theta))?,
            })
        })
        .collect()
}

/// Row of the robustness table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    #[serde(rename = "Mutation Type")]
    pub mutation_type: MutationKind,
    #[serde(rename = "Recall@1 (%)")]
    pub recall_1: f64,
    #[serde(rename = "Recall@3 (%)")]
    pub recall_3: f64,
    #[serde(rename = "Recall@5 (%)")]
    pub recall_5: f64,
    #[serde(rename = "Recall@10 (%)")]
    pub recall_10: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "Samples")]
    pub samples: usize,
}

impl From<&RobustnessResult> for RobustnessRow {
    fn from(r: &RobustnessResult) -> Self {
        let m = &r.metrics;
        Self {
            mutation_type: r.spec.kind,
            recall_1: m.recall(1),
            recall_3: m.recall(3),
            recall_5: m.recall(5),
            recall_10: m.recall(10),
            mrr: m.mrr,
            samples: m.n_samples,
        }
    }
}

/// Row of the threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTableRow {
    #[serde(rename = "Threshold")]
    pub threshold: f64,
    #[serde(rename = "Recall@1 (%)")]
    pub recall_1: f64,
    #[serde(rename = "Recall@3 (%)")]
    pub recall_3: f64,
    #[serde(rename = "Recall@5 (%)")]
    pub recall_5: f64,
    #[serde(rename = "Recall@10 (%)")]
    pub recall_10: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "Retention Rate (%)")]
    pub retention_rate: f64,
}

impl From<&ThresholdRow> for ThresholdTableRow {
    fn from(r: &ThresholdRow) -> Self {
        let m = &r.metrics;
        Self {
            threshold: r.theta,
            recall_1: m.recall(1),
            recall_3: m.recall(3),
            recall_5: m.recall(5),
            recall_10: m.recall(10),
            mrr: m.mrr,
            retention_rate: m.retention_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted: bool,
    pub actual: bool,
}

/// Confusion counts and percentages; a metric whose denominator is zero is
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(predictions: &[Prediction]) -> Result<ClassificationMetrics, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Invalid("no predictions".into()));
    }
    let count = |p: bool, a: bool| predictions.iter().filter(|x| x.predicted == p && x.actual == a).count();
    let (tp, fp, tn, fn_) = (count(true, true), count(true, false), count(false, false), count(false, true));
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let pct = |v: Option<f64>| v.map(|v| 100.0 * v);
    Ok(ClassificationMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: pct(ratio(tp + tn, predictions.len())),
        precision: pct(precision),
        recall: pct(recall),
        f1: pct(f1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Ten variables (3 state, 4 parameters, 3 locals) and ten comments.
    pub(crate) const FIXTURE: &str = "pragma solidity ^0.8.0;
// Vault keeps deposits.
contract Vault {
    // owner of the vault
    address owner;
    mapping(address => uint) balances;
    uint total; // running total

    event Moved(address who, uint amount);

    /// @notice deposit funds
    function deposit(uint amount) public {
        // credit sender
        balances[msg.sender] += amount;
        total = total + amount; /* tally */
        emit Moved(msg.sender, amount);
    }

    // withdraw funds
    function withdraw(uint value, address to) public {
        uint before = balances[to];
        require(before >= value);
        uint remaining = before - value;
        balances[to] = remaining;
        bool ok = payable(to).send(value);
        require(ok); // must succeed
    }

    // transfer ownership
    function setOwner(address next) public {
        owner = next; /* no event */
    }
}
";

    fn spec(kind: MutationKind, seed: u64) -> MutationSpec {
        MutationSpec::new(kind, seed)
    }

    #[test]
    fn candidates_on_fixture() {
        assert_eq!(
            rename_candidates(FIXTURE).unwrap(),
            ["amount", "balances", "before", "next", "ok", "owner", "remaining", "to", "total", "value"]
        );
        assert_eq!(lexer::lex(FIXTURE).comments.len(), 10);
    }

    #[test]
    fn exact_counts() {
        let out = mutate(FIXTURE, &spec(MutationKind::VariableRename, 7)).unwrap();
        assert_eq!(out.edits, 7);
        let remaining: BTreeSet<_> = rename_candidates(&out.text).unwrap().into_iter().filter(|n| !n.starts_with("v_")).collect();
        assert_eq!(remaining.len(), 3);

        let dead = mutate(FIXTURE, &spec(MutationKind::DeadCode, 7)).unwrap();
        assert_eq!(dead.text.matches("if (false)").count(), 3);

        let added = mutate(FIXTURE, &spec(MutationKind::CommentAdd, 7)).unwrap();
        assert_eq!(lexer::lex(&added.text).comments.len(), 15);

        let removed = mutate(FIXTURE, &spec(MutationKind::CommentRemove, 7)).unwrap();
        assert_eq!(lexer::lex(&removed.text).comments.len(), 2);
    }

    #[test]
    fn rename_keeps_structure() {
        let out = mutate(FIXTURE, &spec(MutationKind::VariableRename, 3)).unwrap();
        let before = parse_all(FIXTURE, "").unwrap();
        let after = parse_all(&out.text, "").unwrap();
        assert_eq!(before[0].functions.len(), after[0].functions.len());
        assert_eq!(build_call_graph(&before[0]).edges.len(), build_call_graph(&after[0]).edges.len());
        assert!(out.text.contains("msg.sender"));
        assert!(out.text.contains("// credit sender"));
    }

    #[test]
    fn nothing_to_mutate() {
        let bare = "contract A { function f() public { } }";
        let out = mutate(bare, &spec(MutationKind::CommentRemove, 1)).unwrap();
        assert!(!out.applied);
        assert_eq!(out.text, bare);
        assert!(mutate("contract A {", &spec(MutationKind::DeadCode, 1)).is_err());
    }

    #[test]
    fn combined_is_seeded() {
        let a = mutate(FIXTURE, &spec(MutationKind::Combined, 11)).unwrap();
        let b = mutate(FIXTURE, &spec(MutationKind::Combined, 11)).unwrap();
        let c = mutate(FIXTURE, &spec(MutationKind::Combined, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.text, c.text);
        assert_eq!(a.text.matches(DEAD_CODE_TEMPLATE).count(), 3);
    }

    #[test]
    fn worked_metrics() {
        let m = metrics_from_ranks(&[Some(2), None], 2).unwrap();
        assert_eq!(m.recall(1), 0.0);
        assert_eq!(m.recall(3), 50.0);
        assert_eq!(m.mrr, 0.25);
        let perfect = metrics_from_ranks(&[Some(1); 4], 4).unwrap();
        assert_eq!(perfect.recall(1), 100.0);
        assert_eq!(perfect.mrr, 1.0);
        assert!(metrics_from_ranks(&[], 0).is_err());
    }

    #[test]
    fn classification() {
        let p = |predicted, actual| Prediction { predicted, actual };
        let m = classification_metrics(&[p(true, true), p(true, false), p(false, true), p(false, false)]).unwrap();
        assert_eq!((m.accuracy, m.recall, m.f1), (Some(50.0), Some(50.0), Some(50.0)));
        let all = classification_metrics(&[p(true, true), p(true, true)]).unwrap();
        assert_eq!((all.accuracy, all.recall, all.f1), (Some(100.0), Some(100.0), Some(100.0)));
        let none = classification_metrics(&[p(false, true), p(false, false)]).unwrap();
        assert_eq!(none.precision, None);
        assert_eq!(none.f1, None);
        assert!(classification_metrics(&[]).is_err());
    }
}
