//! Question templates and placeholder rendering.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seed::rng_from_seed;
use super::GenError;
use crate::qa::QaFormat;

/// Category key that matches any leaf without a dedicated template set.
pub const WILDCARD_CATEGORY: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub template_id: String,
    pub format: QaFormat,
    /// Lower-cased parent category name this template is written for, e.g. `musical instrument`.
    pub category: String,
    pub text: String,
}

impl QuestionTemplate {
    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholders(&self.text)
    }

    /// Check the placeholders required by the template's format.
    pub fn validate(&self) -> Result<(), GenError> {
        if self.text.trim().is_empty() {
            return Err(GenError::Placeholder(format!("template {} has empty text", self.template_id)));
        }
        let ph = self.placeholders();
        for p in &ph {
            if p != "category" && p != "label" {
                return Err(GenError::Placeholder(format!(
                    "template {} uses unknown placeholder {{{p}}}",
                    self.template_id
                )));
            }
        }
        let required = match self.format {
            QaFormat::Binary => "label",
            QaFormat::OpenEnded | QaFormat::MultipleChoice => "category",
            QaFormat::Caption => {
                return Err(GenError::Placeholder(format!(
                    "template {}: caption items are imported, not templated",
                    self.template_id
                )))
            }
        };
        if !ph.contains(required) {
            return Err(GenError::Placeholder(format!(
                "template {} ({}) lacks {{{required}}}",
                self.template_id, self.format
            )));
        }
        Ok(())
    }
}

/// Parse and validate a template file (JSON array).
pub fn load_templates(raw: &[u8]) -> Result<Vec<QuestionTemplate>, GenError> {
    let mut templates: Vec<QuestionTemplate> =
        serde_json::from_slice(raw).map_err(|e| GenError::TemplateFile(e.to_string()))?;
    let mut ids = BTreeSet::new();
    for t in &mut templates {
        t.category = t.category.trim().to_lowercase();
        t.validate()?;
        if !ids.insert(t.template_id.clone()) {
            return Err(GenError::TemplateFile(format!("duplicate template_id {}", t.template_id)));
        }
    }
    Ok(templates)
}

fn placeholders(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                out.insert(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

/// Substitute `{category}` / `{label}`. A placeholder in the text with no
/// value supplied is an error.
pub fn render(text: &str, category: Option<&str>, label: Option<&str>) -> Result<String, GenError> {
    let mut out = String::with_capacity(text.len() + 16);
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let Some(end) = after.find('}') else {
            return Err(GenError::Placeholder(format!("unterminated placeholder in {text:?}")));
        };
        let value = match &after[..end] {
            "category" => category,
            "label" => label,
            _ => None,
        };
        match value {
            Some(v) => out.push_str(v),
            None => {
                return Err(GenError::Placeholder(format!(
                    "unresolved placeholder {{{}}} in {text:?}",
                    &after[..end]
                )))
            }
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Uniform seeded choice among templates matching `(format, category)`,
/// in file order.
pub fn select_template<'a>(
    templates: &'a [QuestionTemplate],
    format: QaFormat,
    category: &str,
    rng_seed: u64,
) -> Result<&'a QuestionTemplate, GenError> {
    let matching: Vec<&QuestionTemplate> = templates
        .iter()
        .filter(|t| t.format == format && t.category == category)
        .collect();
    if matching.is_empty() {
        return Err(GenError::NoTemplate {
            format,
            category: category.to_string(),
        });
    }
    let mut rng = rng_from_seed(rng_seed);
    Ok(matching[rng.random_range(0..matching.len())])
}
