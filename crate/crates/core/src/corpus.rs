//! Tweet corpora: CSV loading with validation, writing, and label summaries.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{parse_label_string, LabelId, LabelSet, TaxonomyError, DEFAULT_DELIMITER};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    FileUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {source}")]
    Label {
        line: u64,
        #[source]
        source: TaxonomyError,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("header has no `{0}` column")]
    MissingColumn(String),
    #[error("record `{0}` has no gold labels")]
    MissingGold(String),
}

/// Column layout of a corpus CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub id_column: String,
    pub text_column: String,
    pub label_column: String,
    /// Without a header, columns are read positionally as id, text, labels.
    pub has_header: bool,
    /// Separator between label names inside the label cell.
    pub delimiter: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_column: "id".into(),
            text_column: "tweet".into(),
            label_column: "labels".into(),
            has_header: true,
            delimiter: DEFAULT_DELIMITER.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub gold: Option<LabelSet>,
}

impl TweetRecord {
    pub fn gold_or_err(&self) -> Result<LabelSet, CorpusError> {
        self.gold
            .ok_or_else(|| CorpusError::MissingGold(self.id.clone()))
    }
}

struct Columns {
    id: usize,
    text: usize,
    label: Option<usize>,
    width: usize,
}

fn locate_columns(
    headers: Option<&csv::StringRecord>,
    schema: &CsvSchema,
    has_gold: bool,
) -> Result<Columns, CorpusError> {
    let Some(headers) = headers else {
        return Ok(Columns {
            id: 0,
            text: 1,
            label: has_gold.then_some(2),
            width: if has_gold { 3 } else { 2 },
        });
    };
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id = find(&schema.id_column).ok_or_else(|| CorpusError::MissingColumn(schema.id_column.clone()))?;
    let text = find(&schema.text_column)
        .ok_or_else(|| CorpusError::MissingColumn(schema.text_column.clone()))?;
    let label = match find(&schema.label_column) {
        Some(i) => Some(i),
        None if has_gold => return Err(CorpusError::MissingColumn(schema.label_column.clone())),
        None => None,
    };
    Ok(Columns {
        id,
        text,
        label: if has_gold { label } else { None },
        width: headers.len(),
    })
}

/// Loads a corpus CSV. Record order follows the file.
///
/// Without `has_gold` the label column is ignored (and may be absent); every
/// returned record then has `gold == None`.
pub fn load_csv(path: &Path, has_gold: bool, schema: &CsvSchema) -> Result<Vec<TweetRecord>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, has_gold, schema)
}

pub fn read_csv<R: Read>(reader: R, has_gold: bool, schema: &CsvSchema) -> Result<Vec<TweetRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(reader);
    let headers = if schema.has_header {
        Some(reader.headers().map_err(csv_error)?.clone())
    } else {
        None
    };
    let columns = locate_columns(headers.as_ref(), schema, has_gold)?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != columns.width {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected {} columns, found {}", columns.width, row.len()),
            });
        }
        let id = row[columns.id].trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty id".into(),
            });
        }
        let text = row[columns.text].trim().to_string();
        if text.is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("empty tweet text for id `{id}`"),
            });
        }
        let gold = match columns.label {
            Some(col) => Some(
                parse_label_string(&row[col], &schema.delimiter)
                    .map_err(|source| CorpusError::Label { line, source })?,
            ),
            None => None,
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        records.push(TweetRecord { id, text, gold });
    }
    Ok(records)
}

fn csv_error(err: csv::Error) -> CorpusError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(source) => CorpusError::FileUnreadable {
            path: PathBuf::new(),
            source,
        },
        other => CorpusError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes records with the schema's column names. Records without gold labels
/// get an empty label cell.
pub fn write_csv(records: &[TweetRecord], path: &Path, schema: &CsvSchema) -> Result<(), CorpusError> {
    let unwritable = |source| CorpusError::FileUnwritable {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(unwritable)?;
    write_records(records, file, schema).map_err(unwritable)
}

pub fn write_records<W: Write>(records: &[TweetRecord], writer: W, schema: &CsvSchema) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(writer);
    if schema.has_header {
        writer.write_record([&schema.id_column, &schema.text_column, &schema.label_column])?;
    }
    for r in records {
        let labels = r
            .gold
            .map(|g| g.to_label_string(&schema.delimiter))
            .unwrap_or_default();
        writer.write_record([r.id.as_str(), r.text.as_str(), labels.as_str()])?;
    }
    writer.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub record_count: usize,
    pub per_label_counts: BTreeMap<LabelId, usize>,
    /// Share of records carrying two or more gold labels; 0 for an empty corpus.
    pub multi_label_fraction: f64,
}

pub fn summarize(records: &[TweetRecord]) -> Result<CorpusSummary, CorpusError> {
    let mut per_label_counts: BTreeMap<LabelId, usize> =
        LabelId::ALL.into_iter().map(|l| (l, 0)).collect();
    let mut multi = 0usize;
    for record in records {
        let gold = record.gold_or_err()?;
        for label in gold.iter() {
            *per_label_counts.entry(label).or_default() += 1;
        }
        if gold.len() >= 2 {
            multi += 1;
        }
    }
    let multi_label_fraction = if records.is_empty() {
        0.0
    } else {
        multi as f64 / records.len() as f64
    };
    Ok(CorpusSummary {
        record_count: records.len(),
        per_label_counts,
        multi_label_fraction,
    })
}

impl CorpusSummary {
    /// Aligned plain-text table, one row per label.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>8}", "label", "count", "share");
        for (label, count) in &self.per_label_counts {
            let share = if self.record_count == 0 {
                0.0
            } else {
                *count as f64 / self.record_count as f64
            };
            let _ = writeln!(out, "{:<12} {:>8} {:>8.3}", label.as_str(), count, share);
        }
        let _ = writeln!(out, "{:<12} {:>8}", "records", self.record_count);
        let _ = writeln!(out, "{:<12} {:>8.3}", "multi-label", self.multi_label_fraction);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, has_gold: bool) -> Result<Vec<TweetRecord>, CorpusError> {
        read_csv(text.as_bytes(), has_gold, &CsvSchema::default())
    }

    #[test]
    fn loads_quoted_rows() {
        let text = "id,tweet,labels\n1,\"vaccines, \"\"again\"\"\nsecond line\",pharma political\n2,  plain  ,none\n";
        let records = read(text, true).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].text, "vaccines, \"again\"\nsecond line");
        assert_eq!(
            records[0].gold,
            Some([LabelId::Pharma, LabelId::Political].into_iter().collect())
        );
        assert_eq!(records[1].text, "plain");
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "id,tweet,labels\na,x,none\nb,y,none\na,z,pharma\n";
        match read(text, true) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_carries_line() {
        let text = "id,tweet,labels\na,x,none\nb,y,sideeffects\n";
        match read(text, true) {
            Err(CorpusError::Label { line, source }) => {
                assert_eq!(line, 3);
                assert_eq!(source, TaxonomyError::UnknownLabel("sideeffects".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count() {
        let text = "id,tweet,labels\na,x,none,extra\n";
        assert!(matches!(read(text, true), Err(CorpusError::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn empty_text_is_rejected() {
        let text = "id,tweet,labels\na,   ,none\n";
        assert!(matches!(read(text, true), Err(CorpusError::MalformedRow { .. })));
    }

    #[test]
    fn headerless_and_unlabeled() {
        let schema = CsvSchema {
            has_header: false,
            ..CsvSchema::default()
        };
        let records = read_csv("7,hello,rushed\n".as_bytes(), true, &schema).unwrap();
        assert_eq!(records[0].gold, Some(LabelSet::single(LabelId::Rushed)));

        let unlabeled = read("id,tweet\n1,hi\n", false).unwrap();
        assert_eq!(unlabeled[0].gold, None);
        assert!(matches!(read("id,tweet\n1,hi\n", true), Err(CorpusError::MissingColumn(_))));
    }

    #[test]
    fn custom_columns() {
        let schema = CsvSchema {
            id_column: "ID".into(),
            text_column: "text".into(),
            label_column: "label".into(),
            delimiter: ",".into(),
            ..CsvSchema::default()
        };
        let records = read_csv("label,ID,text\n\"pharma,rushed\",9,t\n".as_bytes(), true, &schema).unwrap();
        assert_eq!(records[0].id, "9");
        assert_eq!(records[0].gold.unwrap().len(), 2);
    }

    #[test]
    fn missing_file() {
        let err = load_csv(Path::new("/nonexistent/train.csv"), true, &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, CorpusError::FileUnreadable { .. }));
    }

    #[test]
    fn summary_of_empty_and_small() {
        let empty = summarize(&[]).unwrap();
        assert_eq!(empty.record_count, 0);
        assert!(empty.per_label_counts.values().all(|&c| c == 0));
        assert_eq!(empty.per_label_counts.len(), 12);

        let records = vec![
            TweetRecord {
                id: "1".into(),
                text: "a".into(),
                gold: Some(LabelSet::single(LabelId::None)),
            },
            TweetRecord {
                id: "2".into(),
                text: "b".into(),
                gold: Some([LabelId::Pharma, LabelId::Political].into_iter().collect()),
            },
        ];
        let summary = summarize(&records).unwrap();
        assert_eq!(summary.multi_label_fraction, 0.5);
        assert_eq!(summary.per_label_counts[&LabelId::Pharma], 1);
        assert!(summary.render_table().contains("pharma"));
    }

    #[test]
    fn summary_requires_gold() {
        let records = vec![TweetRecord {
            id: "x".into(),
            text: "a".into(),
            gold: None,
        }];
        assert!(matches!(summarize(&records), Err(CorpusError::MissingGold(id)) if id == "x"));
    }
}
