use std::path::PathBuf;

use thiserror::Error;

use vaxkit_core::corpus::CorpusError;
use vaxkit_core::finetune::FinetuneError;
use vaxkit_core::metrics::MetricsError;
use vaxkit_core::runfile::RunFileError;
use vaxkit_core::zeroshot::ZeroShotError;

/// Process exit codes, one per error family.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Bad command line (reported by the argument parser).
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    /// A file could not be read or written.
    pub const IO: i32 = 4;
    /// Input files were readable but their contents are invalid.
    pub const DATA: i32 = 5;
    /// Model, backend, or checkpoint failure.
    pub const MODEL: i32 = 6;
    /// Chat endpoint failure (auth, retries exhausted, replay miss).
    pub const ENDPOINT: i32 = 7;
    /// Run file and gold file disagree, or nothing to evaluate.
    pub const EVALUATION: i32 = 8;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    RunFile(#[from] RunFileError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run file ids differ from gold ids; missing: [{}]; extra: [{}]", missing.join(", "), extra.join(", "))]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Corpus(e) => match e {
                CorpusError::FileUnreadable { .. } | CorpusError::FileUnwritable { .. } => exit::IO,
                _ => exit::DATA,
            },
            CliError::RunFile(e) => match e {
                RunFileError::Io { .. } => exit::IO,
                _ => exit::DATA,
            },
            CliError::Finetune(e) => match e {
                FinetuneError::InvalidConfig(_) => exit::CONFIG,
                FinetuneError::Io { .. } => exit::IO,
                FinetuneError::MissingGold(_) => exit::DATA,
                _ => exit::MODEL,
            },
            CliError::ZeroShot(e) => match e.root() {
                ZeroShotError::InvalidConfig(_) => exit::CONFIG,
                ZeroShotError::Io { .. } => exit::IO,
                ZeroShotError::EmptyTweet => exit::DATA,
                _ => exit::ENDPOINT,
            },
            CliError::Metrics(_) | CliError::IdMismatch { .. } => exit::EVALUATION,
        }
    }
}
