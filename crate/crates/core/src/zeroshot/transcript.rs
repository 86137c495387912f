//! JSONL transcripts of zero-shot exchanges, used for audit, resume, and
//! offline replay.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{LlmExchange, ResponseSource, ZeroShotError};
use crate::taxonomy::LabelSet;

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub id: String,
    pub prompt_hash: String,
    pub model: String,
    pub raw_response: String,
    pub parsed: LabelSet,
    pub source: ResponseSource,
    pub cache_hit: bool,
    pub attempts: u32,
    pub latency_ms: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl TranscriptRecord {
    pub fn from_exchange(id: &str, ex: &LlmExchange) -> Self {
        TranscriptRecord {
            id: id.to_string(),
            prompt_hash: ex.prompt_hash.clone(),
            model: ex.bundle.model_name.clone(),
            raw_response: ex.raw_response.clone(),
            parsed: ex.parsed,
            source: ex.source,
            cache_hit: ex.cache_hit,
            attempts: ex.attempt_count,
            latency_ms: ex.latency.as_millis() as u64,
            started_at: ex.started_at,
            finished_at: ex.finished_at,
        }
    }
}

/// Appends records, flushing after each one so a crash loses at most the
/// record being written.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: PathBuf,
    file: Mutex<File>,
    /// Prompt hashes already in the file; records for them are not repeated.
    recorded: HashSet<String>,
}

impl TranscriptWriter {
    /// Opens for appending, creating the file if needed.
    pub fn append(path: &Path) -> Result<Self, ZeroShotError> {
        let io = |source| ZeroShotError::Io { path: path.to_path_buf(), source };
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(path).map_err(io)?;
        // A crash can leave a final line without its newline; start on a fresh line.
        let len = file.metadata().map_err(io)?.len();
        if len > 0 {
            use std::io::{Read, Seek, SeekFrom};
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(io)?;
            file.read_exact(&mut last).map_err(io)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(io)?;
            }
        }
        Ok(TranscriptWriter {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            recorded: HashSet::new(),
        })
    }

    /// Opens an existing transcript (or a new one) for resuming a run.
    /// Returns the records already present; the writer skips any exchange
    /// whose prompt hash is among them.
    pub fn resume(path: &Path) -> Result<(Self, Vec<TranscriptRecord>), ZeroShotError> {
        let existing = if path.exists() { read_transcript(path)? } else { Vec::new() };
        let mut writer = Self::append(path)?;
        writer.recorded = existing.iter().map(|r| r.prompt_hash.clone()).collect();
        Ok((writer, existing))
    }

    pub fn create(path: &Path) -> Result<Self, ZeroShotError> {
        let file = File::create(path).map_err(|source| ZeroShotError::Io { path: path.to_path_buf(), source })?;
        Ok(TranscriptWriter {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            recorded: HashSet::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, record: &TranscriptRecord) -> Result<(), ZeroShotError> {
        if self.recorded.contains(&record.prompt_hash) {
            return Ok(());
        }
        let mut line = serde_json::to_string(record).expect("transcript record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| ZeroShotError::Io { path: self.path.clone(), source })
    }
}

/// Reads every complete record. Unparseable lines (typically a line cut
/// short by a crash) are skipped with a warning.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, ZeroShotError> {
    let io = |source| ZeroShotError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            Err(e) => log::warn!("{}:{}: skipping unreadable transcript line: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

/// Recorded raw replies by prompt hash. Later records win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayLog {
    responses: HashMap<String, String>,
}

impl ReplayLog {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TranscriptRecord>) -> Self {
        ReplayLog {
            responses: records
                .into_iter()
                .map(|r| (r.prompt_hash.clone(), r.raw_response.clone()))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ZeroShotError> {
        Ok(Self::from_records(&read_transcript(path)?))
    }

    pub fn get(&self, prompt_hash: &str) -> Option<&str> {
        self.responses.get(prompt_hash).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}
