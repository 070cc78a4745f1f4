//! Command-line front end: knowledge-base management, contract audits and
//! retrieval evaluation.
//!
//! Exit codes: 0 success, 1 error, 2 when an audited contract's maximum risk
//! reaches the gate.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use solaudit_core::eval::{MutationKind, DEFAULT_THETAS};

use commands::{Outcome, EXIT_ERROR, EXIT_OK};
use config::{AppConfig, LogLevel};

#[derive(Debug, Parser)]
#[command(name = "solaudit", version, about = "Retrieval-augmented bad-practice audits for Solidity")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides layered on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Knowledge-base file.
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    /// Similarity threshold θ.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Call-graph depth bound.
    #[arg(long, global = true)]
    pub d_max: Option<usize>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// Local embedding dimension.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Ignore comments when embedding locally.
    #[arg(long, global = true)]
    pub strip_comments: bool,
    /// Scripted LLM responses (JSON); selects the mock provider.
    #[arg(long, global = true)]
    pub llm_script: Option<String>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub log_level: Option<LogLevel>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or inspect the knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Audit a Solidity file and write one JSON report per contract.
    Audit {
        file: PathBuf,
        /// Audit only this contract.
        #[arg(long)]
        contract: Option<String>,
        /// Report directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Risk at or above which the exit code is 2.
        #[arg(long)]
        gate: Option<f64>,
        /// Add newly confirmed patterns to the knowledge base.
        #[arg(long)]
        learn: bool,
        /// Report timestamp; defaults to SOURCE_DATE_EPOCH, then now.
        #[arg(long)]
        generated_at: Option<String>,
    },
    /// Retrieval evaluation under code mutations.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Create a knowledge base from annotated sources or a slice corpus.
    Build(KbInputArgs),
    /// Append to an existing knowledge base; known entry ids are skipped.
    Add(KbInputArgs),
    /// Print entry counts as JSON.
    Stats,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct KbInputArgs {
    /// A `.sol` file or a directory searched recursively.
    #[arg(long)]
    pub src: Option<PathBuf>,
    /// JSON-Lines slice corpus, one slice per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

impl KbInputArgs {
    fn input(self) -> commands::KbInput {
        match (self.src, self.corpus) {
            (Some(p), _) => commands::KbInput::Sources(p),
            (None, Some(p)) => commands::KbInput::Corpus(p),
            (None, None) => unreachable!("clap requires one input"),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Recall@K and MRR per mutation type.
    Robustness {
        #[arg(long)]
        src: PathBuf,
        /// JSON file with one mutation spec or an array of them.
        #[arg(long)]
        mutations: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Independent runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieval metrics and retention across thresholds.
    Threshold {
        #[arg(long)]
        src: PathBuf,
        /// Comma-separated, ascending.
        #[arg(long, value_delimiter = ',')]
        thetas: Option<Vec<f64>>,
        #[arg(long, value_parser = commands::parse_mutation_kind, default_value = "combined")]
        mutation: MutationKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(global: &GlobalArgs) -> Result<AppConfig> {
    let mut cfg = AppConfig::default();
    if let Some(path) = &global.config {
        cfg.load_file(path)?;
    }
    if let Some(v) = &global.kb {
        cfg.kb_path = v.clone();
    }
    if let Some(v) = global.theta {
        cfg.theta = v;
    }
    if let Some(v) = global.d_max {
        cfg.d_max = v;
    }
    if let Some(v) = global.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = global.dim {
        cfg.embedding.dim = v;
    }
    if global.strip_comments {
        cfg.embedding.strip_comments = true;
    }
    if let Some(v) = &global.llm_script {
        cfg.llm.kind = solaudit_core::llm::LlmKind::Mock;
        cfg.llm.script_path = Some(v.clone());
    }
    if let Some(v) = global.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = global.log_level {
        cfg.log_level = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Pretty JSON to `out`, or as the message when no file is given.
fn emit<T: serde::Serialize>(out: Option<&PathBuf>, doc: &T) -> Result<Outcome> {
    let text = serde_json::to_string_pretty(doc)?;
    match out {
        Some(path) => {
            commands::write_atomic(path, format!("{text}\n").as_bytes())?;
            Ok(Outcome::ok(format!("wrote {}", path.display())))
        }
        None => Ok(Outcome::ok(text)),
    }
}

pub fn execute(cli: Cli) -> Result<Outcome> {
    let mut cfg = resolve_config(&cli.global)?;
    let _ = env_logger::Builder::new().filter_level(cfg.log_level.filter()).try_init();
    match cli.command {
        Command::Kb(KbCommand::Build(input)) => commands::kb_build(&cfg, &input.input()),
        Command::Kb(KbCommand::Add(input)) => commands::kb_add(&cfg, &input.input()),
        Command::Kb(KbCommand::Stats) => commands::kb_stats(&cfg),
        Command::Audit { file, contract, out, gate, learn, generated_at } => {
            if let Some(g) = gate {
                cfg.gate = g;
                cfg.validate()?;
            }
            commands::audit(&cfg, &commands::AuditArgs { file, contract, out_dir: out, learn, generated_at })
        }
        Command::Eval(EvalCommand::Robustness { src, mutations, seed, k, samples, repeat, out }) => {
            let specs = mutations.as_deref().map(commands::load_specs).transpose()?;
            let args = commands::RobustnessArgs { src, specs, seed, k, samples, repeat };
            emit(out.as_ref(), &commands::eval_robustness(&cfg, &args)?)
        }
        Command::Eval(EvalCommand::Threshold { src, thetas, mutation, seed, k, samples, out }) => {
            let thetas = thetas.unwrap_or_else(|| DEFAULT_THETAS.to_vec());
            let args = commands::ThresholdArgs { src, thetas, mutation, seed, k, samples };
            emit(out.as_ref(), &commands::eval_threshold(&cfg, &args)?)
        }
    }
}

/// Parse `args`, run, print, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(outcome) => {
            if !outcome.message.is_empty() {
                let _ = writeln!(std::io::stdout(), "{}", outcome.message);
            }
            outcome.code
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            EXIT_ERROR
        }
    }
}
