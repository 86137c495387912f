//! Submission-style run files: a CSV with header `id,labels`, one row per
//! tweet, label names joined by the configured delimiter in canonical order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::taxonomy::{parse_label_string, LabelSet, TaxonomyError};

const HEADER: [&str; 2] = ["id", "labels"];

#[derive(Debug, Error)]
pub enum RunFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid run rows: {reason} (ids: {})", ids.join(", "))]
    InvariantViolation { reason: String, ids: Vec<String> },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {source}")]
    Label {
        line: u64,
        #[source]
        source: TaxonomyError,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: u64, id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRow {
    pub id: String,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFile {
    pub method_tag: String,
    pub rows: Vec<RunRow>,
}

impl RunFile {
    pub fn new(method_tag: impl Into<String>) -> Self {
        RunFile {
            method_tag: method_tag.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, labels: LabelSet) {
        self.rows.push(RunRow { id: id.into(), labels });
    }

    /// Checks that ids are non-empty and unique and that no label set is empty.
    pub fn validate(&self) -> Result<(), RunFileError> {
        let empty_sets: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.labels.is_empty())
            .map(|r| r.id.clone())
            .collect();
        if !empty_sets.is_empty() {
            return Err(RunFileError::InvariantViolation {
                reason: "empty label set".into(),
                ids: empty_sets,
            });
        }
        if self.rows.iter().any(|r| r.id.is_empty()) {
            return Err(RunFileError::InvariantViolation {
                reason: "empty id".into(),
                ids: vec![String::new()],
            });
        }
        let mut seen = HashSet::new();
        let dups: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !seen.insert(r.id.as_str()))
            .map(|r| r.id.clone())
            .collect();
        if !dups.is_empty() {
            return Err(RunFileError::InvariantViolation {
                reason: "duplicate id".into(),
                ids: dups,
            });
        }
        Ok(())
    }

    /// Serializes to CSV bytes after validation.
    pub fn to_csv_bytes(&self, delimiter: &str) -> Result<Vec<u8>, RunFileError> {
        self.validate()?;
        let mut buf = Vec::new();
        write_rows(&self.rows, &mut buf, delimiter).map_err(|source| RunFileError::Io {
            path: PathBuf::new(),
            source,
        })?;
        Ok(buf)
    }
}

fn write_rows<W: Write>(rows: &[RunRow], writer: W, delimiter: &str) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(writer);
    writer.write_record(HEADER)?;
    for row in rows {
        writer.write_record([row.id.as_str(), &row.labels.to_label_string(delimiter)])?;
    }
    writer.flush()
}

/// Validates, then writes. Nothing is written when validation fails.
pub fn write_run(run: &RunFile, path: &Path, delimiter: &str) -> Result<(), RunFileError> {
    let bytes = run.to_csv_bytes(delimiter)?;
    let io_err = |source| RunFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)
}

/// Reads a run file. The method tag defaults to the file stem.
pub fn read_run(path: &Path, delimiter: &str) -> Result<RunFile, RunFileError> {
    let file = File::open(path).map_err(|source| RunFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_run_from(file, tag, delimiter)
}

pub fn read_run_from<R: Read>(reader: R, method_tag: String, delimiter: &str) -> Result<RunFile, RunFileError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = reader.headers().map_err(malformed)?;
    if headers.len() != 2 || headers.iter().zip(HEADER).any(|(h, want)| h.trim() != want) {
        return Err(RunFileError::MalformedRow {
            line: 1,
            reason: format!("expected header `id,labels`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut run = RunFile::new(method_tag);
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(malformed)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(RunFileError::MalformedRow {
                line,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(RunFileError::MalformedRow {
                line,
                reason: "empty id".into(),
            });
        }
        let labels = parse_label_string(&record[1], delimiter).map_err(|source| RunFileError::Label { line, source })?;
        if !seen.insert(id.clone()) {
            return Err(RunFileError::DuplicateId { line, id });
        }
        run.rows.push(RunRow { id, labels });
    }
    Ok(run)
}

fn malformed(err: csv::Error) -> RunFileError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(source) => RunFileError::Io {
            path: PathBuf::new(),
            source,
        },
        other => RunFileError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::LabelId;

    fn sample() -> RunFile {
        let mut run = RunFile::new("demo");
        run.push("1", [LabelId::SideEffect, LabelId::Rushed].into_iter().collect());
        run.push("2", LabelSet::single(LabelId::None));
        run
    }

    #[test]
    fn two_rows_three_lines() {
        let bytes = sample().to_csv_bytes(" ").unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text, "id,labels\n1,rushed side-effect\n2,none\n");
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.csv");
        write_run(&sample(), &path, " ").unwrap();
        assert_eq!(read_run(&path, " ").unwrap(), sample());
    }

    #[test]
    fn empty_label_set_is_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut run = sample();
        run.push("3", LabelSet::empty());
        match write_run(&run, &path, " ") {
            Err(RunFileError::InvariantViolation { ids, .. }) => assert_eq!(ids, vec!["3".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(!path.exists());
    }

    #[test]
    fn label_typo_has_line_number() {
        let text = "id,labels\n1,none\n2,pharm\n";
        match read_run_from(text.as_bytes(), "t".into(), " ") {
            Err(RunFileError::Label { line, source }) => {
                assert_eq!(line, 3);
                assert_eq!(source, TaxonomyError::UnknownLabel("pharm".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_valid() {
        let run = read_run_from("id,labels\n".as_bytes(), "t".into(), " ").unwrap();
        assert!(run.rows.is_empty());
    }

    #[test]
    fn duplicate_and_malformed_rows() {
        assert!(matches!(
            read_run_from("id,labels\na,none\na,pharma\n".as_bytes(), "t".into(), " "),
            Err(RunFileError::DuplicateId { line: 3, .. })
        ));
        assert!(matches!(
            read_run_from("id,labels\na,none,x\n".as_bytes(), "t".into(), " "),
            Err(RunFileError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            read_run_from("identifier,labels\n".as_bytes(), "t".into(), " "),
            Err(RunFileError::MalformedRow { line: 1, .. })
        ));
    }
}
