//! Multi-label evaluation: per-label confusion counts, macro-F1, and
//! Jaccard similarity.
//!
//! Conventions:
//!
//! * Per-label F1 is `2tp / (2tp + fp + fn)`. A label that is never gold and
//!   never predicted has a 0/0 score. With [`AbsentLabels::Zero`] (default)
//!   it scores 0 and still counts towards the macro mean, so a run that uses
//!   one label perfectly scores 1/12. [`AbsentLabels::Skip`] excludes such
//!   labels from the mean instead.
//! * Jaccard is sample-averaged by default: the mean over pairs of
//!   `|pred ∩ gold| / |pred ∪ gold|`. [`JaccardMode::PerLabel`] averages
//!   `tp / (tp + fp + fn)` over labels, using the same absent-label rule.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelId, LabelSet, NUM_LABELS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionPair {
    pub id: String,
    pub predicted: LabelSet,
    pub gold: LabelSet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }

    /// True when the label was neither gold nor predicted anywhere.
    pub fn is_absent(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn jaccard(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// How labels with no gold and no predicted occurrences enter macro averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsentLabels {
    #[default]
    Zero,
    Skip,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JaccardMode {
    #[default]
    Sample,
    PerLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub absent_labels: AbsentLabels,
    pub jaccard: JaccardMode,
}

pub fn per_label_confusion(pairs: &[PredictionPair]) -> Result<[Confusion; NUM_LABELS], MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut table = [Confusion::default(); NUM_LABELS];
    for pair in pairs {
        for label in pair.predicted.union(pair.gold).iter() {
            let cell = &mut table[label.index()];
            match (pair.predicted.contains(label), pair.gold.contains(label)) {
                (true, true) => cell.tp += 1,
                (true, false) => cell.fp += 1,
                (false, true) => cell.fn_ += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    Ok(table)
}

fn macro_mean(table: &[Confusion; NUM_LABELS], absent: AbsentLabels, score: impl Fn(&Confusion) -> f64) -> f64 {
    let scored: Vec<f64> = table
        .iter()
        .filter(|c| absent == AbsentLabels::Zero || !c.is_absent())
        .map(score)
        .collect();
    if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    }
}

pub fn macro_f1(pairs: &[PredictionPair]) -> Result<f64, MetricsError> {
    macro_f1_with(pairs, AbsentLabels::Zero)
}

pub fn macro_f1_with(pairs: &[PredictionPair], absent: AbsentLabels) -> Result<f64, MetricsError> {
    let table = per_label_confusion(pairs)?;
    Ok(macro_mean(&table, absent, Confusion::f1))
}

/// Sample-averaged Jaccard similarity.
pub fn jaccard_similarity(pairs: &[PredictionPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let union = p.predicted.union(p.gold).len();
            // Both sets are non-empty for well-formed pairs; two empty sets
            // are treated as identical.
            if union == 0 {
                1.0
            } else {
                p.predicted.intersection(p.gold).len() as f64 / union as f64
            }
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

pub fn jaccard_with(pairs: &[PredictionPair], options: MetricOptions) -> Result<f64, MetricsError> {
    match options.jaccard {
        JaccardMode::Sample => jaccard_similarity(pairs),
        JaccardMode::PerLabel => {
            let table = per_label_confusion(pairs)?;
            Ok(macro_mean(&table, options.absent_labels, Confusion::jaccard))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub macro_f1: f64,
    pub jaccard: f64,
    pub per_label: BTreeMap<LabelId, LabelScores>,
    pub pair_count: usize,
    pub options: MetricOptions,
}

pub fn evaluate(pairs: &[PredictionPair]) -> Result<EvaluationReport, MetricsError> {
    evaluate_with(pairs, MetricOptions::default())
}

pub fn evaluate_with(pairs: &[PredictionPair], options: MetricOptions) -> Result<EvaluationReport, MetricsError> {
    let mut ids = HashSet::with_capacity(pairs.len());
    for pair in pairs {
        if !ids.insert(pair.id.as_str()) {
            return Err(MetricsError::DuplicateId(pair.id.clone()));
        }
    }
    let table = per_label_confusion(pairs)?;
    let per_label = LabelId::ALL
        .into_iter()
        .map(|label| {
            let c = table[label.index()];
            let scores = LabelScores {
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                support: c.support(),
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
            };
            (label, scores)
        })
        .collect();
    Ok(EvaluationReport {
        macro_f1: macro_mean(&table, options.absent_labels, Confusion::f1),
        jaccard: jaccard_with(pairs, options)?,
        per_label,
        pair_count: pairs.len(),
        options,
    })
}

/// One structured record of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Metric {
        name: String,
        value: f64,
    },
    Label {
        label: LabelId,
        #[serde(flatten)]
        scores: LabelScores,
    },
}

impl EvaluationReport {
    /// Two-decimal summary row: method, Macro-F1, Jaccard.
    pub fn render_summary(&self, method: &str) -> String {
        let width = method.len().max(6);
        format!(
            "{:<width$}  {:>8}  {:>7}\n{:<width$}  {:>8.2}  {:>7.2}\n",
            "method", "Macro-F1", "Jaccard", method, self.macro_f1, self.jaccard
        )
    }

    pub fn render_per_label(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            "label", "precision", "recall", "f1", "support"
        );
        for (label, s) in &self.per_label {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                label.as_str(),
                s.precision,
                s.recall,
                s.f1,
                s.support
            );
        }
        out
    }

    /// Metric records first, then one record per label in canonical order.
    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out = vec![
            ReportRecord::Metric {
                name: "macro_f1".into(),
                value: self.macro_f1,
            },
            ReportRecord::Metric {
                name: "jaccard".into(),
                value: self.jaccard,
            },
            ReportRecord::Metric {
                name: "pair_count".into(),
                value: self.pair_count as f64,
            },
        ];
        out.extend(self.per_label.iter().map(|(label, scores)| ReportRecord::Label {
            label: *label,
            scores: *scores,
        }));
        out
    }

    /// JSON Lines rendering of [`records`](Self::records).
    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("report records serialize") + "\n")
            .collect()
    }
}
