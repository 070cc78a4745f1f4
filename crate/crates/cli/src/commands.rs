//! Subcommand bodies. Each returns an [`Outcome`]; printing and exit codes
//! are left to the caller.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use solaudit_core::embedding::{provider_from_config, Embedder};
use solaudit_core::eval::{
    build_probes, robustness_eval, samples_from_sources, threshold_sweep, MutationKind, MutationSpec, RobustnessRow,
    ThresholdTableRow,
};
use solaudit_core::kb::{KnowledgeEntry, VectorStore};
use solaudit_core::llm::llm_from_config;
use solaudit_core::report::{build_contract_report, emit_json, ContractMeta};
use solaudit_core::slicer::{build_corpus, corpus_from_jsonl, ContextSlice, DepthBound};
use solaudit_core::source::{parse_all, parse_and_tag};
use solaudit_core::verifier::{SeverityTable, Verifier, VerifierConfig};

use crate::config::AppConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_GATE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

impl Outcome {
    pub fn ok(message: impl Into<String>) -> Self {
        Self { code: EXIT_OK, message: message.into() }
    }
}

/// Write via a sibling temp file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("bad output path {}", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp).with_context(|| format!("cannot write {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// `.sol` files under `src` as (relative name, text), sorted by name. A
/// single file is returned under its file name.
pub fn collect_sources(src: &Path) -> Result<Vec<(String, String)>> {
    if src.is_file() {
        let name = src.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let text = std::fs::read_to_string(src).with_context(|| format!("cannot read {}", src.display()))?;
        return Ok(vec![(name, text)]);
    }
    if !src.is_dir() {
        bail!("{} does not exist", src.display());
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "sol") {
            continue;
        }
        let rel = path.strip_prefix(src).unwrap_or(path);
        let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        match std::fs::read_to_string(path) {
            Ok(text) => out.push((name, text)),
            Err(e) => log::warn!("{}: skipped, {e}", path.display()),
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn embedder(cfg: &AppConfig) -> Result<Box<dyn Embedder>> {
    provider_from_config(&cfg.embedding).map_err(|e| anyhow!("embedding provider: {e}"))
}

fn load_kb(cfg: &AppConfig, embedder: &dyn Embedder) -> Result<VectorStore> {
    let kb = VectorStore::load(&cfg.kb_path)
        .map_err(|e| anyhow!("cannot load knowledge base {}: {e}", cfg.kb_path.display()))?;
    if kb.dim() != embedder.dim() {
        bail!(
            "knowledge base {} has dimension {}, embedder produces {}",
            cfg.kb_path.display(),
            kb.dim(),
            embedder.dim()
        );
    }
    Ok(kb)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct BuildStats {
    pub files: usize,
    pub functions: usize,
    pub tagged: usize,
    pub inserted: usize,
}

/// Slice and embed every annotated function under `src` into `kb`.
/// Entries whose id is already present are skipped.
pub fn ingest(kb: &mut VectorStore, src: &Path, cfg: &AppConfig, embedder: &dyn Embedder) -> Result<BuildStats> {
    let bound = DepthBound::new(cfg.d_max);
    let mut stats = BuildStats::default();
    for (name, text) in collect_sources(src)? {
        let units = match parse_and_tag(&text, &name) {
            Ok((units, _)) => units,
            Err(e) => {
                log::warn!("{name}: skipped, {e}");
                continue;
            }
        };
        stats.files += 1;
        stats.functions += units.iter().map(|u| u.functions.len()).sum::<usize>();
        let slices = build_corpus(&units, bound, true);
        stats.tagged += slices.len();
        let fresh: Vec<_> = slices.into_iter().filter(|s| !kb.contains(&s.slice_id())).collect();
        if fresh.is_empty() {
            continue;
        }
        let texts: Vec<&str> = fresh.iter().map(|s| s.assembled_text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts).map_err(|e| anyhow!("{name}: {e}"))?;
        for (slice, vector) in fresh.iter().zip(vectors) {
            if kb.contains(&slice.slice_id()) {
                log::warn!("{}: duplicate slice id, skipped", slice.slice_id());
                continue;
            }
            kb.insert(KnowledgeEntry::from_slice(slice, vector))?;
            stats.inserted += 1;
        }
    }
    Ok(stats)
}

/// Embed slices read from a JSON-Lines corpus into `kb`. Slices without SWC
/// tags and ids already present are skipped.
pub fn ingest_corpus(kb: &mut VectorStore, path: &Path, embedder: &dyn Embedder) -> Result<BuildStats> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let slices = corpus_from_jsonl(&text).with_context(|| format!("{} is not a slice corpus", path.display()))?;
    let mut stats = BuildStats {
        files: slices.iter().map(|s| &s.metadata.source_file).collect::<BTreeSet<_>>().len(),
        functions: slices.len(),
        ..BuildStats::default()
    };
    let mut fresh = Vec::new();
    for slice in slices {
        if slice.metadata.swc_types.is_empty() {
            continue;
        }
        stats.tagged += 1;
        let id = slice.slice_id();
        if kb.contains(&id) || fresh.iter().any(|s: &ContextSlice| s.slice_id() == id) {
            continue;
        }
        fresh.push(slice);
    }
    let texts: Vec<&str> = fresh.iter().map(|s| s.assembled_text.as_str()).collect();
    let vectors = embedder.embed_batch(&texts).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    for (slice, vector) in fresh.iter().zip(vectors) {
        kb.insert(KnowledgeEntry::from_slice(slice, vector))?;
        stats.inserted += 1;
    }
    Ok(stats)
}

/// Where `kb build` and `kb add` read from.
#[derive(Debug, Clone)]
pub enum KbInput {
    Sources(PathBuf),
    Corpus(PathBuf),
}

impl KbInput {
    fn path(&self) -> &Path {
        match self {
            KbInput::Sources(p) | KbInput::Corpus(p) => p,
        }
    }

    fn ingest(&self, kb: &mut VectorStore, cfg: &AppConfig, embedder: &dyn Embedder) -> Result<BuildStats> {
        match self {
            KbInput::Sources(p) => ingest(kb, p, cfg, embedder),
            KbInput::Corpus(p) => ingest_corpus(kb, p, embedder),
        }
    }
}

fn stats_line(s: BuildStats) -> String {
    format!("files: {}, functions: {}, tagged: {}, inserted: {}", s.files, s.functions, s.tagged, s.inserted)
}

pub fn kb_build(cfg: &AppConfig, input: &KbInput) -> Result<Outcome> {
    let embedder = embedder(cfg)?;
    let mut kb = VectorStore::new(embedder.dim());
    let stats = input.ingest(&mut kb, cfg, embedder.as_ref())?;
    if stats.inserted == 0 {
        bail!("no annotated functions found in {}; knowledge base not written", input.path().display());
    }
    kb.save(&cfg.kb_path)?;
    Ok(Outcome::ok(format!("{} -> {}", stats_line(stats), cfg.kb_path.display())))
}

pub fn kb_add(cfg: &AppConfig, input: &KbInput) -> Result<Outcome> {
    let embedder = embedder(cfg)?;
    let mut kb = load_kb(cfg, embedder.as_ref())?;
    let stats = input.ingest(&mut kb, cfg, embedder.as_ref())?;
    if stats.inserted > 0 {
        kb.save(&cfg.kb_path)?;
    }
    Ok(Outcome::ok(format!("{} -> {} ({} entries)", stats_line(stats), cfg.kb_path.display(), kb.len())))
}

pub fn kb_stats(cfg: &AppConfig) -> Result<Outcome> {
    let kb = VectorStore::load(&cfg.kb_path)
        .map_err(|e| anyhow!("cannot load knowledge base {}: {e}", cfg.kb_path.display()))?;
    let mut swc: BTreeMap<&str, usize> = BTreeMap::new();
    let mut files: BTreeMap<&str, usize> = BTreeMap::new();
    for e in kb.entries() {
        for id in &e.metadata.swc_types {
            *swc.entry(id).or_default() += 1;
        }
        *files.entry(&e.metadata.source_file).or_default() += 1;
    }
    let doc = json!({
        "path": cfg.kb_path.display().to_string(),
        "dim": kb.dim(),
        "entries": kb.len(),
        "files": files.len(),
        "swc_types": swc,
    });
    Ok(Outcome::ok(serde_json::to_string_pretty(&doc)?))
}

/// `flag`, else `SOURCE_DATE_EPOCH`, else the current time.
pub fn resolve_generated_at(flag: Option<&str>, epoch: Option<&str>) -> Result<String> {
    if let Some(f) = flag {
        return Ok(f.to_string());
    }
    let when = match epoch {
        Some(s) => {
            let secs: i64 = s.trim().parse().with_context(|| format!("SOURCE_DATE_EPOCH `{s}` is not an integer"))?;
            chrono::DateTime::from_timestamp(secs, 0).ok_or_else(|| anyhow!("SOURCE_DATE_EPOCH out of range"))?
        }
        None => chrono::Utc::now(),
    };
    Ok(when.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

#[derive(Debug, Clone, Default)]
pub struct AuditArgs {
    pub file: PathBuf,
    pub contract: Option<String>,
    pub out_dir: PathBuf,
    pub learn: bool,
    pub generated_at: Option<String>,
}

/// Audit every contract in a file (or just `--contract`), one report each.
/// Exit code 2 when any contract reaches the gate.
pub fn audit(cfg: &AppConfig, args: &AuditArgs) -> Result<Outcome> {
    let text = std::fs::read_to_string(&args.file).with_context(|| format!("cannot read {}", args.file.display()))?;
    let file_name = args.file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut units = parse_all(&text, &file_name).map_err(|e| anyhow!("{file_name}: {e}"))?;
    if let Some(name) = &args.contract {
        units.retain(|u| &u.contract_name == name);
        if units.is_empty() {
            bail!("contract `{name}` not found in {file_name}");
        }
    }
    if units.is_empty() {
        bail!("{file_name}: no contracts found");
    }

    let embedder = embedder(cfg)?;
    let mut kb = load_kb(cfg, embedder.as_ref())?;
    let provider = llm_from_config(&cfg.llm).map_err(|e| anyhow!("llm provider: {e}"))?;
    let table = match &cfg.severity_table_path {
        Some(p) => SeverityTable::from_file(p).map_err(|e| anyhow!("severity table {}: {e}", p.display()))?,
        None => SeverityTable::default(),
    };
    let generated_at =
        resolve_generated_at(args.generated_at.as_deref(), std::env::var("SOURCE_DATE_EPOCH").ok().as_deref())?;
    let bound = DepthBound::new(cfg.d_max);
    let verifier_config = VerifierConfig {
        top_k: cfg.top_k,
        threshold: cfg.threshold(),
        aggregation: cfg.aggregation,
        weights: None,
        parallelism: cfg.parallelism,
    };

    let mut lines = Vec::new();
    let mut gated = false;
    let mut learned = 0;
    for unit in &units {
        let slices = build_corpus(std::slice::from_ref(unit), bound, false);
        let audits = Verifier {
            kb: &kb,
            embedder: embedder.as_ref(),
            provider: provider.as_ref(),
            table: &table,
            config: verifier_config.clone(),
        }
        .verify_all(&slices);
        let report = build_contract_report(
            &audits,
            &slices,
            &unit.raw_lines,
            ContractMeta {
                contract_name: unit.contract_name.clone(),
                source_file: file_name.clone(),
                generated_at: generated_at.clone(),
            },
        );
        let path = args.out_dir.join(format!("{}.audit.json", unit.contract_name));
        write_atomic(&path, emit_json(&report).as_bytes())?;
        gated |= report.max_risk >= cfg.gate;
        lines.push(format!(
            "{}: {} items, max risk {:.4} -> {}",
            unit.contract_name,
            report.items.len(),
            report.max_risk,
            path.display()
        ));

        if args.learn {
            for (slice, audit) in slices.iter().zip(&audits) {
                let confirmed: Vec<String> = audit.confirmed_swc_ids().into_iter().collect();
                if confirmed.is_empty() {
                    continue;
                }
                let probe = embedder.embed(&slice.assembled_text).map_err(|e| anyhow!("{e}"))?;
                let outcome = kb.dynamic_update(slice, &probe, cfg.threshold(), |_| Ok::<_, std::convert::Infallible>(confirmed))?;
                if matches!(outcome, solaudit_core::kb::UpdateOutcome::Inserted { .. }) {
                    learned += 1;
                }
            }
        }
    }
    if learned > 0 {
        kb.save(&cfg.kb_path)?;
        lines.push(format!("learned {learned} new pattern(s) -> {}", cfg.kb_path.display()));
    }
    Ok(Outcome {
        code: if gated { EXIT_GATE } else { EXIT_OK },
        message: lines.join("\n"),
    })
}

/// Parse a mutation kind name, case-insensitively, with or without
/// separators (`dead-code`, `DeadCode`, `dead_code`).
pub fn parse_mutation_kind(s: &str) -> Result<MutationKind, String> {
    let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    MutationKind::ALL
        .into_iter()
        .find(|k| format!("{k:?}").to_ascii_lowercase() == norm)
        .ok_or_else(|| format!("unknown mutation `{s}`"))
}

/// Specs from a JSON file holding one spec or an array of them.
pub fn load_specs(path: &Path) -> Result<Vec<MutationSpec>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let specs: Vec<MutationSpec> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

#[derive(Debug, Clone)]
pub struct RobustnessArgs {
    pub src: PathBuf,
    pub specs: Option<Vec<MutationSpec>>,
    pub seed: u64,
    pub k: usize,
    pub samples: usize,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRun {
    pub seed: u64,
    pub rows: Vec<RobustnessRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessDoc {
    pub k: usize,
    pub samples: usize,
    pub seed: u64,
    pub runs: Vec<RobustnessRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDoc {
    pub k: usize,
    pub samples: usize,
    pub mutation: MutationKind,
    pub rows: Vec<ThresholdTableRow>,
}

pub fn eval_robustness(cfg: &AppConfig, args: &RobustnessArgs) -> Result<RobustnessDoc> {
    let embedder = embedder(cfg)?;
    let kb = load_kb(cfg, embedder.as_ref())?;
    let bound = DepthBound::new(cfg.d_max);
    let sources = collect_sources(&args.src)?;
    let samples = samples_from_sources(&kb, &sources, bound, args.samples, args.seed);
    if samples.is_empty() {
        bail!("no function under {} matches a knowledge-base entry", args.src.display());
    }
    let base: Vec<MutationSpec> = args
        .specs
        .clone()
        .unwrap_or_else(|| MutationKind::ALL.into_iter().map(|k| MutationSpec::new(k, 0)).collect());
    let mut runs = Vec::new();
    for r in 0..args.repeat.max(1) {
        let seed = args.seed.wrapping_add(r as u64);
        let specs: Vec<MutationSpec> = base.iter().map(|s| MutationSpec { seed: s.seed ^ seed, ..s.clone() }).collect();
        let results = robustness_eval(&kb, &samples, &specs, args.k, embedder.as_ref(), bound)?;
        for res in &results {
            if res.failed_samples > 0 {
                log::warn!("{:?}: {} sample(s) failed to mutate", res.spec.kind, res.failed_samples);
            }
        }
        runs.push(RobustnessRun { seed, rows: results.iter().map(RobustnessRow::from).collect() });
    }
    Ok(RobustnessDoc { k: args.k, samples: samples.len(), seed: args.seed, runs })
}

#[derive(Debug, Clone)]
pub struct ThresholdArgs {
    pub src: PathBuf,
    pub thetas: Vec<f64>,
    pub mutation: MutationKind,
    pub seed: u64,
    pub k: usize,
    pub samples: usize,
}

pub fn eval_threshold(cfg: &AppConfig, args: &ThresholdArgs) -> Result<ThresholdDoc> {
    let embedder = embedder(cfg)?;
    let kb = load_kb(cfg, embedder.as_ref())?;
    let bound = DepthBound::new(cfg.d_max);
    let sources = collect_sources(&args.src)?;
    let samples = samples_from_sources(&kb, &sources, bound, args.samples, args.seed);
    if samples.is_empty() {
        bail!("no function under {} matches a knowledge-base entry", args.src.display());
    }
    let spec = MutationSpec::new(args.mutation, args.seed);
    let (probes, failed) = build_probes(&samples, &spec, embedder.as_ref(), bound);
    if failed > 0 {
        log::warn!("{failed} sample(s) failed to mutate");
    }
    let rows = threshold_sweep(&kb, &probes, &args.thetas, args.k)?;
    Ok(ThresholdDoc {
        k: args.k,
        samples: probes.len(),
        mutation: args.mutation,
        rows: rows.iter().map(ThresholdTableRow::from).collect(),
    })
}
