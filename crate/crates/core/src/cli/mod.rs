//! `musicskills` command line.
//!
//! Every run prints one JSON summary line on stdout; progress and
//! diagnostics go to stderr. Exit codes: 0 success, 1 usage or
//! configuration error, 2 data validation failure, 3 external service
//! failure.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::config::ImportSpec;
use crate::qa::{QaFormat, Source};

#[derive(Debug, Parser)]
#[command(name = "musicskills", version, about = "Build and score music question-answering datasets")]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Keep only these formats (open, binary, mcq, caption). Repeatable.
    #[arg(long = "format-filter", global = true, value_parser = parse_format)]
    pub format_filter: Vec<QaFormat>,
    /// Keep only these sources. Repeatable.
    #[arg(long = "source-filter", global = true, value_parser = parse_source)]
    pub source_filter: Vec<Source>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Mcq,
    Binary,
    Label,
    Caption,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    Trigram,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Adapter {
    Musiccaps,
    Mtt,
    Fma,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Template-based items from ontology labels.
    GenerateRule,
    /// Items from a chat-completion endpoint, prompted with clip captions and metadata.
    GenerateLlm,
    /// Merge, dedup, split and shard item files.
    Assemble {
        /// Item JSONL file or shard directory. Repeatable.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// External collection as SOURCE=PATH. Repeatable.
        #[arg(long = "import", value_parser = parse_import)]
        imports: Vec<ImportSpec>,
        #[arg(long)]
        shard_size: Option<usize>,
    },
    /// Per-source, per-task counts.
    Stats {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score model outputs.
    Eval {
        #[arg(long)]
        items: PathBuf,
        /// JSONL of {"qa_id", "text"}.
        #[arg(long)]
        outputs: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        task: EvalTask,
        /// JSON object mapping qa_id to a reporting group.
        #[arg(long)]
        category_map: Option<PathBuf>,
        /// Candidate labels for the label task (JSON array or one per line).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "trigram")]
        embedder: EmbedderKind,
        /// Earlier report to express scores against, as percentages.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Check every item invariant on existing files; exit 2 on any violation.
    Validate {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Turn a source dataset's metadata file into a clip manifest.
    Convert {
        #[arg(long, value_enum)]
        adapter: Adapter,
        #[arg(long)]
        input: PathBuf,
        /// JSON object mapping source tags to ontology label ids.
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateRule => "generate-rule",
            Command::GenerateLlm => "generate-llm",
            Command::Assemble { .. } => "assemble",
            Command::Stats { .. } => "stats",
            Command::Eval { .. } => "eval",
            Command::Validate { .. } => "validate",
            Command::Convert { .. } => "convert",
        }
    }
}

fn parse_format(s: &str) -> Result<QaFormat, String> {
    s.parse().map_err(|_| format!("unknown format {s:?} (open, binary, mcq, caption)"))
}

fn parse_source(s: &str) -> Result<Source, String> {
    s.parse().map_err(|e: crate::qa::UnknownSource| e.to_string())
}

fn parse_import(s: &str) -> Result<ImportSpec, String> {
    let (source, path) = s.split_once('=').ok_or("expected SOURCE=PATH")?;
    Ok(ImportSpec {
        source: parse_source(source)?,
        path: PathBuf::from(path),
    })
}

/// A failed run: exit code plus message, and any extra summary fields.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    pub details: Value,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn service(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
            details: Value::Null,
        }
    }
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code != 0 {
                println!("{}", json!({"command": null, "status": "error", "exit_code": 1, "error": e.kind().to_string()}));
            }
            return code;
        }
    };
    let name = cli.command.name();
    let started = std::time::Instant::now();
    let outcome = commands::dispatch(&cli);
    let seconds = started.elapsed().as_secs_f64();
    match outcome {
        Ok(mut summary) => {
            summary["command"] = json!(name);
            summary["status"] = json!("ok");
            summary["exit_code"] = json!(0);
            summary["seconds"] = json!((seconds * 1000.0).round() / 1000.0);
            println!("{summary}");
            0
        }
        Err(f) => {
            eprintln!("{name}: {}", f.message);
            let mut summary = match f.details {
                Value::Object(_) => f.details,
                _ => json!({}),
            };
            summary["command"] = json!(name);
            summary["status"] = json!("error");
            summary["exit_code"] = json!(f.code);
            summary["error"] = json!(f.message);
            println!("{summary}");
            f.code
        }
    }
}
