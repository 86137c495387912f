//! The `vaxkit` command: train, predict, zeroshot, evaluate, summarize.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand};

use vaxkit_core::metrics::{AbsentLabels, JaccardMode};

pub use config::Settings;
pub use error::{exit, CliError};
pub use manifest::{manifest_path, RunManifest, RunStatus, SubcommandKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "vaxkit", version, about = "Classify vaccine-concern tweets and score the predictions")]
pub struct Cli {
    /// TOML settings file (overridden by VAXKIT_* variables and flags).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Separator between labels inside a label cell.
    #[arg(long, global = true)]
    pub delimiter: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fine-tune a classifier and save a checkpoint.
    Train(TrainArgs),
    /// Label a corpus with a saved checkpoint and write a run file.
    Predict(PredictArgs),
    /// Label a corpus with a prompted chat model and write a run file.
    Zeroshot(ZeroShotArgs),
    /// Score a run file against gold labels.
    Evaluate(EvaluateArgs),
    /// Print per-label counts for a labeled corpus.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub backend: Option<String>,
    /// Embedding server URL for remote backends.
    #[arg(long)]
    pub embedding_server: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train only the dense head.
    #[arg(long)]
    pub freeze_encoder: bool,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub embedding_server: Option<String>,
    /// Run file path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[arg(long)]
    pub test: PathBuf,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Recorded transcript to answer prompts from. Without an endpoint the
    /// run is fully offline.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Transcript path; defaults to `<out>.transcript.jsonl`. An existing
    /// transcript is resumed.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Run file path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run file to score.
    #[arg(long)]
    pub run: PathBuf,
    /// Gold-labeled corpus.
    #[arg(long)]
    pub test: PathBuf,
    /// Report path; defaults to `<run>.report.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `zero` or `skip`: how labels absent from both sides enter macro-F1.
    #[arg(long, value_parser = config::parse_absent)]
    pub absent_labels: Option<AbsentLabels>,
    /// `sample` or `per-label`.
    #[arg(long, value_parser = config::parse_jaccard)]
    pub jaccard: Option<JaccardMode>,
}

#[derive(Debug, Args)]
#[group(id = "input", required = true, multiple = false, args = ["train", "test"])]
pub struct SummarizeArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Summary JSON path; defaults to `<input>.summary.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Command {
    fn kind(&self) -> SubcommandKind {
        match self {
            Command::Train(_) => SubcommandKind::Train,
            Command::Predict(_) => SubcommandKind::Predict,
            Command::Zeroshot(_) => SubcommandKind::Zeroshot,
            Command::Evaluate(_) => SubcommandKind::Evaluate,
            Command::Summarize(_) => SubcommandKind::Summarize,
        }
    }

    /// The file the manifest is written beside.
    pub fn primary_output(&self) -> PathBuf {
        match self {
            Command::Train(a) => a.out.clone(),
            Command::Predict(a) => a.out.clone(),
            Command::Zeroshot(a) => a.out.clone(),
            Command::Evaluate(a) => a.out.clone().unwrap_or_else(|| with_suffix(&a.run, ".report.jsonl")),
            Command::Summarize(a) => a.out.clone().unwrap_or_else(|| {
                let input = a.train.as_ref().or(a.test.as_ref()).expect("clap requires one input");
                with_suffix(input, ".summary.json")
            }),
        }
    }

    fn apply_flags(&self, s: &mut Settings) {
        fn put<T: Clone>(flag: &Option<T>, slot: &mut T) {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        match self {
            Command::Train(a) => {
                put(&a.backend, &mut s.train.backend);
                if a.embedding_server.is_some() {
                    s.train.embedding_server = a.embedding_server.clone();
                }
                put(&a.epochs, &mut s.train.epochs);
                put(&a.batch_size, &mut s.train.batch_size);
                put(&a.lr, &mut s.train.learning_rate);
                put(&a.threshold, &mut s.predict.threshold);
                put(&a.seed, &mut s.train.seed);
                if a.freeze_encoder {
                    s.train.freeze_encoder = true;
                }
            }
            Command::Predict(a) => {
                put(&a.threshold, &mut s.predict.threshold);
                if a.embedding_server.is_some() {
                    s.train.embedding_server = a.embedding_server.clone();
                }
            }
            Command::Zeroshot(a) => {
                if a.endpoint.is_some() {
                    s.zeroshot.endpoint = a.endpoint.clone();
                }
                put(&a.model, &mut s.zeroshot.model);
                if a.cache_dir.is_some() {
                    s.zeroshot.cache_dir = a.cache_dir.clone();
                }
                put(&a.concurrency, &mut s.zeroshot.concurrency);
            }
            Command::Evaluate(a) => {
                put(&a.absent_labels, &mut s.evaluate.absent_labels);
                put(&a.jaccard, &mut s.evaluate.jaccard);
            }
            Command::Summarize(_) => {}
        }
    }
}

/// Defaults, then the config file, then the environment, then flags.
pub fn resolve_settings(cli: &Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<Settings, CliError> {
    let config_path = cli.config.clone().or_else(|| env("VAXKIT_CONFIG").map(PathBuf::from));
    let mut settings = match &config_path {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    settings.apply_env(env)?;
    if let Some(d) = &cli.delimiter {
        settings.data.delimiter = d.clone();
    }
    cli.command.apply_flags(&mut settings);
    if settings.data.delimiter.is_empty() {
        return Err(CliError::Config("label delimiter must not be empty".into()));
    }
    Ok(settings)
}

/// What a successful command reports back for its manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seed: Option<u64>,
    pub details: serde_json::Value,
}

/// Files a command has started writing; removed if the command fails.
#[derive(Debug, Default)]
pub struct PartialOutputs(Vec<PathBuf>);

impl PartialOutputs {
    pub fn track(&mut self, path: &Path) {
        self.0.push(path.to_path_buf());
    }

    fn remove_all(&self) {
        for path in &self.0 {
            if path.exists() {
                if let Err(e) = std::fs::remove_file(path) {
                    log::warn!("could not remove partial output {}: {e}", path.display());
                }
            }
        }
    }
}

/// Runs one command and returns the process exit code. A manifest is
/// written beside the primary output whether the command succeeds or not.
pub fn run(cli: Cli, env: &dyn Fn(&str) -> Option<String>) -> i32 {
    let started_at = Utc::now();
    let kind = cli.command.kind();
    let primary = cli.command.primary_output();

    let mut partial = PartialOutputs::default();
    let (settings, result) = match resolve_settings(&cli, env) {
        Ok(s) => {
            let result = commands::dispatch(&cli.command, &s, env, &mut partial);
            (s, result)
        }
        Err(e) => (Settings::default(), Err(e)),
    };

    let (status, exit_code, error, outcome) = match result {
        Ok(outcome) => (RunStatus::Success, exit::SUCCESS, None, outcome),
        Err(e) => {
            partial.remove_all();
            eprintln!("error: {e}");
            (RunStatus::Failure, e.exit_code(), Some(e.to_string()), Outcome::default())
        }
    };
    let manifest = RunManifest {
        subcommand: kind,
        status,
        exit_code,
        error,
        config: settings,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        seed: outcome.seed,
        started_at,
        finished_at: Utc::now(),
        toolkit_version: VERSION.to_string(),
        details: outcome.details,
    };
    let path = manifest_path(&primary);
    if let Err(e) = manifest.write(&path) {
        eprintln!("error: cannot write manifest {}: {e}", path.display());
        return if exit_code == exit::SUCCESS { exit::IO } else { exit_code };
    }
    exit_code
}
