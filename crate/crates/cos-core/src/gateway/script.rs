//! Loader for mock-provider script files.
//!
//! A script file is a JSON document with an ordered `rules` list. Each rule
//! matches requests by prompt kind and/or by substrings of the rendered
//! request text; the first matching rule serves the request. This is the
//! offline provider behind `mock:` endpoints in experiment configs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatewayError, MockProvider};
use crate::prompts::{kind_marker, PromptKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    pub rules: Vec<ScriptRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Restricts the rule to one prompt family, matched via a distinctive
    /// substring of the corresponding template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScriptKind>,
    /// Substrings of the request text that must all be present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub responses: Vec<String>,
    #[serde(default)]
    pub repeat_last: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    QaGeneration,
    Answer,
    Refine,
    ZeroShotSummary,
}

impl ScriptKind {
    fn marker(self) -> &'static str {
        match self {
            ScriptKind::QaGeneration => kind_marker(PromptKind::QaGeneration),
            ScriptKind::Answer => kind_marker(PromptKind::Answer),
            ScriptKind::Refine => kind_marker(PromptKind::Refine),
            ScriptKind::ZeroShotSummary => kind_marker(PromptKind::ZeroShotSummary),
        }
    }
}

/// Builds a [`MockProvider`] from a script file.
pub fn load_script_file(path: &Path) -> Result<MockProvider, GatewayError> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        GatewayError::InvalidRequest(format!("cannot read script file {}: {e}", path.display()))
    })?;
    let script: ScriptFile = serde_json::from_str(&raw).map_err(|e| {
        GatewayError::InvalidRequest(format!("malformed script file {}: {e}", path.display()))
    })?;
    build_provider(&script)
}

/// Builds a [`MockProvider`] from an in-memory script.
pub fn build_provider(script: &ScriptFile) -> Result<MockProvider, GatewayError> {
    let provider = MockProvider::new();
    for rule in &script.rules {
        let mut needles = rule.contains.clone();
        if let Some(kind) = rule.kind {
            needles.push(kind.marker().to_string());
        }
        provider.register_containing(needles, rule.responses.clone(), rule.repeat_last)?;
    }
    Ok(provider)
}
