//! Versioned prompt templates.
//!
//! The default set is compiled in from `assets/prompts.toml`; deployments
//! may load a replacement file with the same shape.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::FeedbackArea;

const BUILTIN: &str = include_str!("../assets/prompts.toml");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing template file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("template file has no framework for {0}")]
    MissingFramework(&'static str),
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackTemplates {
    pub frameworks: BTreeMap<String, String>,
    pub turn_level: String,
    pub turn_level_user: String,
    pub overall: String,
    pub overall_user: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PatientTemplates {
    pub response: String,
    pub history: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Contracts {
    pub stage: String,
    pub turn_feedback: String,
    pub overall: String,
    pub patient: String,
    pub profile: String,
    pub repair: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PromptTemplates {
    id: String,
    version: u32,
    pub profile: String,
    pub conv_stage: String,
    pub feedback: FeedbackTemplates,
    pub patient: PatientTemplates,
    pub contracts: Contracts,
    #[serde(skip)]
    digest: String,
}

impl PromptTemplates {
    pub fn parse(src: &str) -> Result<Self, TemplateError> {
        let mut t: PromptTemplates = toml::from_str(src)?;
        for area in FeedbackArea::ALL {
            if !t.feedback.frameworks.contains_key(area.stage().as_str()) {
                return Err(TemplateError::MissingFramework(area.stage().as_str()));
            }
        }
        t.digest = hex::encode(Sha256::digest(src.as_bytes()));
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The compiled-in template set.
    pub fn builtin() -> &'static PromptTemplates {
        static CELL: OnceLock<PromptTemplates> = OnceLock::new();
        CELL.get_or_init(|| PromptTemplates::parse(BUILTIN).expect("builtin templates parse"))
    }

    /// Identifier recorded in session logs: `name/vN@hash-prefix`.
    pub fn template_id(&self) -> String {
        format!("{}/v{}@{}", self.id, self.version, &self.digest[..12])
    }

    pub fn framework(&self, area: FeedbackArea) -> &str {
        &self.feedback.frameworks[area.stage().as_str()]
    }
}

/// Replaces `{name}` placeholders found in `vars` in a single pass.
///
/// Unknown placeholders and other braces are left as they are, and
/// substituted values are never rescanned.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses_with_all_frameworks() {
        let t = PromptTemplates::builtin();
        assert!(t.template_id().starts_with("disclosure-prompts/v1@"));
        assert!(t.conv_stage.contains("4. Maximum two stages allowed"));
    }

    #[test]
    fn criteria_text_comes_from_frameworks() {
        let t = PromptTemplates::builtin();
        for area in FeedbackArea::ALL {
            let block = t.framework(area);
            assert!(block.contains("Rate how well the physician from 0-5:"));
            for c in area.criteria() {
                assert!(block.contains(&format!("- {}", c.text)), "{} missing from {area:?}", c.text);
                for d in c.details {
                    assert!(block.contains(d));
                }
            }
            let bullets = block.lines().filter(|l| l.trim_start().starts_with("- ")).count();
            let expected: usize = area.criteria().iter().map(|c| 1 + c.details.len()).sum();
            assert_eq!(bullets, expected, "{area:?}");
        }
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("a {x} {y} {unknown} {\"k\": 1}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(out, "a {y} Y {unknown} {\"k\": 1}");
        assert_eq!(fill("{", &[]), "{");
        assert_eq!(fill("tail {x", &[("x", "1")]), "tail {x");
    }
}
