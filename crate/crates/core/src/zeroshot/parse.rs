//! Turning free-form model replies into label sets.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{LabelId, LabelSet};

/// How strictly replies are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseMode {
    /// Find label names (and close variants) anywhere in the reply.
    #[default]
    Lenient,
    /// The reply must be a comma-separated list of exact label identifiers.
    Strict,
}

/// Case-insensitive, word-bounded patterns per label, in canonical order.
fn patterns() -> &'static [(LabelId, Regex); 12] {
    static PATTERNS: OnceLock<[(LabelId, Regex); 12]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        LabelId::ALL.map(|label| {
            let body = match label {
                LabelId::Unnecessary => r"unnecessary",
                LabelId::Mandatory => r"mandatory",
                LabelId::Pharma => r"(?:big[\s_-]*)?pharma",
                LabelId::Conspiracy => r"conspirac(?:y|ies)",
                LabelId::Political => r"political",
                LabelId::Country => r"countr(?:y|ies)",
                LabelId::Rushed => r"rushed",
                LabelId::Ingredients => r"ingredients?",
                LabelId::SideEffect => r"side[\s_-]*effects?",
                LabelId::Ineffective => r"ineffective",
                LabelId::Religious => r"religious",
                LabelId::None => r"none",
            };
            let re = Regex::new(&format!(r"(?i)\b{body}\b")).expect("static pattern");
            (label, re)
        })
    })
}

/// Reads a label set out of a model reply. Never fails: a reply with no
/// recognizable label yields `{none}` and a warning in the log.
pub fn parse_response(raw: &str) -> LabelSet {
    parse_response_with(raw, ParseMode::Lenient)
}

pub fn parse_response_with(raw: &str, mode: ParseMode) -> LabelSet {
    let found = match mode {
        ParseMode::Lenient => lenient(raw),
        ParseMode::Strict => strict(raw),
    };
    match found {
        Some(set) if !set.is_empty() => set.normalized(),
        _ => {
            log::warn!("no label recognized in model reply {:?}; using `none`", truncate(raw, 80));
            LabelSet::single(LabelId::None)
        }
    }
}

fn lenient(raw: &str) -> Option<LabelSet> {
    Some(patterns().iter().filter(|(_, re)| re.is_match(raw)).map(|(l, _)| *l).collect())
}

fn strict(raw: &str) -> Option<LabelSet> {
    let mut set = LabelSet::empty();
    for item in raw.trim().trim_end_matches('.').split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        set.insert(item.parse::<LabelId>().ok()?);
    }
    Some(set)
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
