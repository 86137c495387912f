//! The twelve vaccine-concern labels, their metadata, and conversions between
//! label strings, label sets, and multi-hot vectors.
//!
//! [`LabelId::ALL`] is the single source of truth for label order. Multi-hot
//! vectors, classifier head outputs, run files, and reports all index labels
//! by [`LabelId::index`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of labels in the scheme.
pub const NUM_LABELS: usize = 12;

/// Default separator between label names inside one CSV cell.
pub const DEFAULT_DELIMITER: &str = " ";

const DEFAULT_LABELS_TOML: &str = include_str!("../config/labels.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("empty label string")]
    EmptyLabelString,
    #[error("invalid label delimiter {0:?}")]
    InvalidDelimiter(String),
    #[error("label metadata: {0}")]
    Metadata(String),
}

/// One of the twelve vaccine-concern labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelId {
    Unnecessary,
    Mandatory,
    Pharma,
    Conspiracy,
    Political,
    Country,
    Rushed,
    Ingredients,
    SideEffect,
    Ineffective,
    Religious,
    None,
}

impl LabelId {
    /// All labels in canonical order.
    pub const ALL: [LabelId; NUM_LABELS] = [
        LabelId::Unnecessary,
        LabelId::Mandatory,
        LabelId::Pharma,
        LabelId::Conspiracy,
        LabelId::Political,
        LabelId::Country,
        LabelId::Rushed,
        LabelId::Ingredients,
        LabelId::SideEffect,
        LabelId::Ineffective,
        LabelId::Religious,
        LabelId::None,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<LabelId> {
        Self::ALL.get(index).copied()
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            LabelId::Unnecessary => "unnecessary",
            LabelId::Mandatory => "mandatory",
            LabelId::Pharma => "pharma",
            LabelId::Conspiracy => "conspiracy",
            LabelId::Political => "political",
            LabelId::Country => "country",
            LabelId::Rushed => "rushed",
            LabelId::Ingredients => "ingredients",
            LabelId::SideEffect => "side-effect",
            LabelId::Ineffective => "ineffective",
            LabelId::Religious => "religious",
            LabelId::None => "none",
        }
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelId {
    type Err = TaxonomyError;

    /// Case-insensitive, surrounding whitespace ignored. Only the exact
    /// identifiers are accepted; see `zeroshot::parse` for lenient matching.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = s.trim().to_lowercase();
        LabelId::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == token)
            .ok_or_else(|| TaxonomyError::UnknownLabel(s.trim().to_string()))
    }
}

/// The fixed canonical label order.
pub fn canonical_labels() -> [LabelId; NUM_LABELS] {
    LabelId::ALL
}

/// A subset of the twelve labels, stored as a bitmask.
///
/// Iteration always yields labels in canonical order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LabelSet(u16);

impl LabelSet {
    const FULL_MASK: u16 = (1 << NUM_LABELS) - 1;

    pub const fn empty() -> Self {
        LabelSet(0)
    }

    pub const fn full() -> Self {
        LabelSet(Self::FULL_MASK)
    }

    pub fn single(label: LabelId) -> Self {
        LabelSet(1 << label.index())
    }

    /// Builds a set from its bitmask; bits above the twelfth are dropped.
    pub const fn from_bits(bits: u16) -> Self {
        LabelSet(bits & Self::FULL_MASK)
    }

    pub const fn bits(self) -> u16 {
        self.0
    }

    pub fn insert(&mut self, label: LabelId) {
        self.0 |= 1 << label.index();
    }

    pub fn remove(&mut self, label: LabelId) {
        self.0 &= !(1 << label.index());
    }

    pub fn contains(self, label: LabelId) -> bool {
        self.0 & (1 << label.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = LabelId> {
        LabelId::ALL.into_iter().filter(move |l| self.contains(*l))
    }

    /// Applies the output rule shared by every classifier: `none` is dropped
    /// when any other label is present, and an empty set becomes `{none}`.
    pub fn normalized(self) -> LabelSet {
        let mut out = self;
        if out.len() > 1 && out.contains(LabelId::None) {
            out.remove(LabelId::None);
        }
        if out.is_empty() {
            out = LabelSet::single(LabelId::None);
        }
        out
    }

    /// Joins label names in canonical order.
    pub fn to_label_string(self, delimiter: &str) -> String {
        self.iter().map(LabelId::as_str).collect::<Vec<_>>().join(delimiter)
    }
}

impl FromIterator<LabelId> for LabelSet {
    fn from_iter<I: IntoIterator<Item = LabelId>>(iter: I) -> Self {
        let mut set = LabelSet::empty();
        for label in iter {
            set.insert(label);
        }
        set
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(LabelId::as_str)).finish()
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.to_label_string(", "))
    }
}

impl Serialize for LabelSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<LabelId>::deserialize(deserializer)?;
        Ok(labels.into_iter().collect())
    }
}

/// Splits `raw` on `delimiter` and maps every non-empty token to a label.
pub fn parse_label_string(raw: &str, delimiter: &str) -> Result<LabelSet, TaxonomyError> {
    if delimiter.is_empty() {
        return Err(TaxonomyError::InvalidDelimiter(delimiter.to_string()));
    }
    if raw.trim().is_empty() {
        return Err(TaxonomyError::EmptyLabelString);
    }
    // A whitespace delimiter also absorbs runs of whitespace.
    let tokens: Box<dyn Iterator<Item = &str>> = if delimiter.trim().is_empty() {
        Box::new(raw.split_whitespace())
    } else {
        Box::new(raw.split(delimiter))
    };
    let mut set = LabelSet::empty();
    for token in tokens.map(str::trim).filter(|t| !t.is_empty()) {
        set.insert(token.parse()?);
    }
    if set.is_empty() {
        return Err(TaxonomyError::EmptyLabelString);
    }
    Ok(set)
}

pub fn to_multi_hot(set: LabelSet) -> [u8; NUM_LABELS] {
    let mut out = [0u8; NUM_LABELS];
    for label in set.iter() {
        out[label.index()] = 1;
    }
    out
}

/// Inverse of [`to_multi_hot`]; any non-zero entry counts as present.
pub fn from_multi_hot(bits: &[u8; NUM_LABELS]) -> LabelSet {
    LabelId::ALL
        .into_iter()
        .filter(|l| bits[l.index()] != 0)
        .collect()
}

/// Description and prompt keywords for one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMeta {
    pub id: LabelId,
    pub description: String,
    pub keywords: Vec<String>,
}

/// Metadata for all twelve labels, indexed canonically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    metas: Vec<LabelMeta>,
}

#[derive(Deserialize)]
struct CatalogFile {
    label: Vec<LabelMeta>,
}

impl LabelCatalog {
    /// The catalog shipped with the crate (`config/labels.toml`).
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_LABELS_TOML).expect("bundled label metadata is valid")
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Metadata(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| TaxonomyError::Metadata(e.to_string()))?;
        Self::from_metas(file.label)
    }

    /// Accepts metas in any order; every label must appear exactly once with
    /// a non-empty description.
    pub fn from_metas(metas: Vec<LabelMeta>) -> Result<Self, TaxonomyError> {
        let mut slots: Vec<Option<LabelMeta>> = vec![None; NUM_LABELS];
        for meta in metas {
            if meta.description.trim().is_empty() {
                return Err(TaxonomyError::Metadata(format!(
                    "label `{}` has an empty description",
                    meta.id
                )));
            }
            let slot = &mut slots[meta.id.index()];
            if slot.is_some() {
                return Err(TaxonomyError::Metadata(format!(
                    "label `{}` is listed twice",
                    meta.id
                )));
            }
            *slot = Some(meta);
        }
        let missing: Vec<&str> = LabelId::ALL
            .iter()
            .filter(|l| slots[l.index()].is_none())
            .map(|l| l.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(TaxonomyError::Metadata(format!(
                "missing labels: {}",
                missing.join(", ")
            )));
        }
        Ok(LabelCatalog {
            metas: slots.into_iter().flatten().collect(),
        })
    }

    pub fn get(&self, label: LabelId) -> &LabelMeta {
        &self.metas[label.index()]
    }

    /// Metas in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = &LabelMeta> {
        self.metas.iter()
    }
}

impl Default for LabelCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_fixed() {
        let labels = canonical_labels();
        assert_eq!(labels.len(), 12);
        assert_eq!(labels[0], LabelId::Unnecessary);
        assert_eq!(labels[8], LabelId::SideEffect);
        assert_eq!(labels[11], LabelId::None);
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(LabelId::from_index(i), Some(*l));
        }
        assert_eq!(canonical_labels(), labels);
    }

    #[test]
    fn parses_label_strings() {
        let set = parse_label_string("side-effect ineffective", " ").unwrap();
        assert_eq!(
            set,
            [LabelId::SideEffect, LabelId::Ineffective].into_iter().collect()
        );
        assert_eq!(
            parse_label_string("NONE", " ").unwrap(),
            LabelSet::single(LabelId::None)
        );
        assert_eq!(
            parse_label_string("sideeffects", " "),
            Err(TaxonomyError::UnknownLabel("sideeffects".into()))
        );
        assert_eq!(parse_label_string("  ", " "), Err(TaxonomyError::EmptyLabelString));
        assert_eq!(parse_label_string("", ","), Err(TaxonomyError::EmptyLabelString));
        assert_eq!(
            parse_label_string(" pharma ,Political", ",").unwrap(),
            [LabelId::Pharma, LabelId::Political].into_iter().collect()
        );
        assert!(matches!(
            parse_label_string("pharma", ""),
            Err(TaxonomyError::InvalidDelimiter(_))
        ));
    }

    #[test]
    fn multi_hot_placement() {
        assert_eq!(to_multi_hot(LabelSet::empty()), [0; 12]);
        let set: LabelSet = [LabelId::Unnecessary, LabelId::None].into_iter().collect();
        let hot = to_multi_hot(set);
        assert_eq!(hot[0], 1);
        assert_eq!(hot[11], 1);
        assert_eq!(hot.iter().map(|&b| b as usize).sum::<usize>(), 2);
        assert_eq!(to_multi_hot(LabelSet::full()), [1; 12]);
    }

    #[test]
    fn multi_hot_round_trip_is_exhaustive() {
        for bits in 0u16..4096 {
            let set = LabelSet::from_bits(bits);
            assert_eq!(from_multi_hot(&to_multi_hot(set)), set);
        }
    }

    #[test]
    fn label_string_reserialization_is_stable() {
        for bits in 1u16..4096 {
            let set = LabelSet::from_bits(bits);
            for delim in [" ", ",", ";", " | "] {
                let text = set.to_label_string(delim);
                assert_eq!(parse_label_string(&text, delim).unwrap(), set);
            }
        }
    }

    #[test]
    fn normalization_rule() {
        assert_eq!(LabelSet::empty().normalized(), LabelSet::single(LabelId::None));
        let mixed: LabelSet = [LabelId::Pharma, LabelId::None].into_iter().collect();
        assert_eq!(mixed.normalized(), LabelSet::single(LabelId::Pharma));
        let only_none = LabelSet::single(LabelId::None);
        assert_eq!(only_none.normalized(), only_none);
    }

    #[test]
    fn builtin_catalog_is_complete() {
        let catalog = LabelCatalog::builtin();
        for (meta, label) in catalog.iter().zip(LabelId::ALL) {
            assert_eq!(meta.id, label);
            assert!(!meta.description.is_empty());
        }
        assert_eq!(
            catalog.get(LabelId::SideEffect).keywords[0],
            "side effects".to_string()
        );
        assert!(catalog.get(LabelId::None).keywords.is_empty());
    }

    #[test]
    fn catalog_rejects_incomplete_metadata() {
        let text = r#"
[[label]]
id = "pharma"
description = "x"
keywords = []
"#;
        let err = LabelCatalog::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("missing labels"));

        let no_keywords = r#"
[[label]]
id = "pharma"
description = "x"
"#;
        assert!(LabelCatalog::from_toml_str(no_keywords).is_err());
    }

    #[test]
    fn label_set_serde_uses_names() {
        let set: LabelSet = [LabelId::SideEffect, LabelId::Pharma].into_iter().collect();
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(json, r#"["pharma","side-effect"]"#);
        let back: LabelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }
}
