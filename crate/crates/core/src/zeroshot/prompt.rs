//! Prompt templates and rendering.
//!
//! A template file has an optional comment header followed by a `[system]`
//! and a `[user]` section:
//!
//! ```text
//! # name: zero-shot-v1
//! [system]
//! ...{labels}...
//! [user]
//! ...{tweet}...
//! ```
//!
//! `{labels}` expands to one line per label in canonical order:
//! `N. "id": description (keywords: a, b, c)`. The parenthetical is omitted
//! when a label has no keywords.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ZeroShotError;
use crate::taxonomy::LabelCatalog;

const BUILTIN_TEMPLATE: &str = include_str!("../../templates/zero_shot_v1.txt");

/// Sampling parameters for one chat completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.7,
            max_tokens: 50,
            stop: None,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), ZeroShotError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ZeroShotError::InvalidConfig(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_tokens < 1 {
            return Err(ZeroShotError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    system: String,
    user: String,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATE).expect("bundled template is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ZeroShotError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ZeroShotError::InvalidConfig(format!("template {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ZeroShotError> {
        let invalid = |msg: &str| ZeroShotError::InvalidConfig(format!("prompt template: {msg}"));
        let mut name = String::from("custom");
        let mut section: Option<&str> = None;
        let mut system = Vec::new();
        let mut user = Vec::new();
        for line in text.lines() {
            match (section, line.trim_end()) {
                (_, "[system]") => section = Some("system"),
                (_, "[user]") => section = Some("user"),
                (None, l) if l.starts_with('#') => {
                    if let Some(n) = l.trim_start_matches('#').trim().strip_prefix("name:") {
                        name = n.trim().to_string();
                    }
                }
                (None, l) if l.trim().is_empty() => {}
                (None, _) => return Err(invalid("text before the [system] section")),
                (Some("system"), _) => system.push(line),
                (Some(_), _) => user.push(line),
            }
        }
        let system = system.join("\n").trim().to_string();
        let user = user.join("\n").trim().to_string();
        if !system.contains("{labels}") {
            return Err(invalid("[system] section must contain {labels}"));
        }
        if !user.contains("{tweet}") {
            return Err(invalid("[user] section must contain {tweet}"));
        }
        Ok(PromptTemplate { name, system, user })
    }

    pub fn render_system(&self, catalog: &LabelCatalog) -> String {
        self.system.replace("{labels}", &render_label_lines(catalog))
    }

    pub fn render_user(&self, tweet: &str) -> String {
        self.user.replace("{tweet}", tweet)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::builtin()
    }
}

fn render_label_lines(catalog: &LabelCatalog) -> String {
    let mut out = String::new();
    for (i, meta) in catalog.iter().enumerate() {
        let _ = write!(out, "{}. \"{}\": {}", i + 1, meta.id, meta.description.trim());
        if !meta.keywords.is_empty() {
            let _ = write!(out, " (keywords: {})", meta.keywords.join(", "));
        }
        out.push('\n');
    }
    out.pop();
    out
}

/// Everything sent for one zero-shot call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub params: DecodingParams,
    pub model_name: String,
}

/// Renders the prompt for one tweet. The tweet is inserted verbatim.
pub fn build_prompt(
    tweet: &str,
    catalog: &LabelCatalog,
    template: &PromptTemplate,
    params: &DecodingParams,
    model_name: &str,
) -> PromptBundle {
    PromptBundle {
        system_text: template.render_system(catalog),
        user_text: template.render_user(tweet),
        params: params.clone(),
        model_name: model_name.to_string(),
    }
}
