//! Prompt templates with `{product_type}`, `{color}` and `{place}` slots.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

/// The template set shipped with the crate.
pub const DEFAULT_TEMPLATES: &str = include_str!("../assets/templates.toml");

pub const SLOTS: [&str; 3] = ["product_type", "color", "place"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Insertion,
    Colorization,
    Background,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [TemplateId::Insertion, TemplateId::Colorization, TemplateId::Background];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Insertion => "insertion",
            TemplateId::Colorization => "colorization",
            TemplateId::Background => "background",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateId {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PipelineError::param(format!("unknown template `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub product_type: String,
    pub color: String,
    pub place: String,
    pub template_id: TemplateId,
}

impl PromptSpec {
    pub fn new(product_type: &str, color: &str, place: &str, template_id: TemplateId) -> Self {
        Self {
            product_type: product_type.into(),
            color: color.into(),
            place: place.into(),
            template_id,
        }
    }

    pub fn with_template(&self, template_id: TemplateId) -> Self {
        Self {
            template_id,
            ..self.clone()
        }
    }

    fn slot(&self, name: &str) -> &str {
        match name {
            "product_type" => &self.product_type,
            "color" => &self.color,
            "place" => &self.place,
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TemplateEntry {
    text: String,
}

/// Template texts keyed by id. Loaded from TOML so the wording can be edited
/// without rebuilding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    texts: BTreeMap<TemplateId, String>,
}

/// Which template rendered a prompt, for run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    /// SHA-256 of the template text.
    pub template_digest: String,
    pub text: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }
}

impl TemplateSet {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, TemplateEntry> =
            toml::from_str(text).map_err(|e| PipelineError::param(format!("template file: {e}")))?;
        let mut texts = BTreeMap::new();
        for (key, entry) in raw {
            let id: TemplateId = key.parse()?;
            check_placeholders(&entry.text)?;
            texts.insert(id, entry.text);
        }
        for id in TemplateId::ALL {
            if !texts.contains_key(&id) {
                return Err(PipelineError::param(format!("template file lacks `[{id}]`")));
            }
        }
        Ok(Self { texts })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn text(&self, id: TemplateId) -> &str {
        &self.texts[&id]
    }

    pub fn digest(&self, id: TemplateId) -> String {
        hex::encode(Sha256::digest(self.text(id).as_bytes()))
    }

    /// Slots that appear in the template.
    pub fn slots(&self, id: TemplateId) -> Vec<&'static str> {
        let text = self.text(id);
        SLOTS
            .into_iter()
            .filter(|s| text.contains(&format!("{{{s}}}")))
            .collect()
    }

    pub fn render(&self, spec: &PromptSpec) -> Result<String> {
        Ok(self.render_recorded(spec)?.text)
    }

    pub fn render_recorded(&self, spec: &PromptSpec) -> Result<RenderedPrompt> {
        let mut text = self.text(spec.template_id).to_string();
        for slot in self.slots(spec.template_id) {
            let value = spec.slot(slot).trim();
            if value.is_empty() {
                return Err(PipelineError::param(format!(
                    "template `{}` needs a non-empty `{slot}`",
                    spec.template_id
                )));
            }
            text = text.replace(&format!("{{{slot}}}"), value);
        }
        Ok(RenderedPrompt {
            template_id: spec.template_id,
            template_digest: self.digest(spec.template_id),
            text,
        })
    }
}

fn check_placeholders(text: &str) -> Result<()> {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| PipelineError::param(format!("unclosed `{{` in template `{text}`")))?;
        let name = &rest[open + 1..open + close];
        if !SLOTS.contains(&name) {
            return Err(PipelineError::param(format!("unknown slot `{{{name}}}` in template `{text}`")));
        }
        rest = &rest[open + close + 1..];
    }
    Ok(())
}

/// Renders with the bundled templates.
pub fn render_prompt(spec: &PromptSpec) -> Result<String> {
    TemplateSet::default().render(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_template_fills_all_three_slots() {
        let spec = PromptSpec::new("bicycle", "red", "city street", TemplateId::Insertion);
        let text = render_prompt(&spec).unwrap();
        for s in ["bicycle", "red", "city street"] {
            assert!(text.contains(s), "{text}");
        }
        assert!(!text.contains('{'));
        assert_eq!(text, render_prompt(&spec).unwrap());
    }

    #[test]
    fn empty_slot_is_rejected() {
        let spec = PromptSpec::new("bicycle", "", "city street", TemplateId::Insertion);
        assert!(matches!(render_prompt(&spec), Err(PipelineError::Parameter(_))));
    }

    #[test]
    fn slot_absent_from_template_may_be_empty() {
        let spec = PromptSpec::new("", "", "driveway", TemplateId::Background);
        assert!(render_prompt(&spec).unwrap().contains("driveway"));
    }

    #[test]
    fn edited_templates_change_digest() {
        let custom = "[insertion]\ntext = \"{product_type} at {place}, {color}\"\n\
                      [colorization]\ntext = \"{color} {product_type}\"\n\
                      [background]\ntext = \"{place}\"\n";
        let set = TemplateSet::from_toml_str(custom).unwrap();
        let spec = PromptSpec::new("car", "blue", "driveway", TemplateId::Insertion);
        let rec = set.render_recorded(&spec).unwrap();
        assert_eq!(rec.text, "car at driveway, blue");
        assert_ne!(rec.template_digest, TemplateSet::default().digest(TemplateId::Insertion));
    }

    #[test]
    fn unknown_slot_or_missing_template_fails() {
        assert!(TemplateSet::from_toml_str("[insertion]\ntext = \"{size}\"\n").is_err());
        assert!(TemplateSet::from_toml_str("[insertion]\ntext = \"{place}\"\n").is_err());
    }
}
