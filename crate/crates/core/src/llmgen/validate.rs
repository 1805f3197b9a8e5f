//! Format invariants for items, with a light normalization pass.

use std::collections::HashSet;

use crate::qa::{render_options, QaFormat, QaItem, NO, YES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationRules {
    /// Required option count for multiple-choice items; `None` accepts any count ≥ 2.
    pub mcq_options: Option<usize>,
}

impl Default for ValidationRules {
    fn default() -> Self {
        ValidationRules { mcq_options: Some(4) }
    }
}

/// Question text without a trailing rendered option block.
pub fn mcq_stem<'a>(question: &'a str, options: &[String]) -> &'a str {
    let q = question.trim_end();
    if options.is_empty() {
        return q;
    }
    let block = render_options(options);
    q.strip_suffix(block.as_str()).map(str::trim_end).unwrap_or(q)
}

fn fold(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Every invariant the item breaks; empty when valid. No normalization is applied.
pub fn violations(item: &QaItem, rules: &ValidationRules) -> Vec<String> {
    let mut v = Vec::new();
    if item.qa_id.trim().is_empty() {
        v.push("empty qa_id".to_string());
    }
    if item.audio_id.trim().is_empty() {
        v.push("empty audio_id".to_string());
    }
    if item.question.trim().is_empty() {
        v.push("empty question".to_string());
    }
    if item.answer.trim().is_empty() {
        v.push("empty answer".to_string());
    }
    match item.format {
        QaFormat::MultipleChoice => {
            let n = item.options.len();
            match rules.mcq_options {
                Some(k) if n != k => v.push(format!("expected {k} options, found {n}")),
                None if n < 2 => v.push(format!("expected at least 2 options, found {n}")),
                _ => {}
            }
            if item.options.iter().any(|o| o.trim().is_empty()) {
                v.push("empty option".to_string());
            }
            let distinct: HashSet<String> = item.options.iter().map(|o| fold(o)).collect();
            if distinct.len() != n {
                v.push("duplicate options".to_string());
            }
            if !item.options.contains(&item.answer) {
                v.push("answer not in options".to_string());
            }
            match item.answer_index {
                None if item.options.contains(&item.answer) => v.push("missing answer_index".to_string()),
                None => {}
                Some(i) if i >= n => v.push(format!("answer_index {i} out of range")),
                Some(i) if item.options[i] != item.answer => {
                    v.push("answer_index does not point at answer".to_string())
                }
                Some(_) => {}
            }
        }
        _ => {
            if !item.options.is_empty() {
                v.push(format!("options present on {} item", item.format));
            }
            if item.answer_index.is_some() {
                v.push(format!("answer_index present on {} item", item.format));
            }
        }
    }
    if item.format == QaFormat::Binary && item.answer != YES && item.answer != NO {
        v.push("binary answer must be Yes or No".to_string());
    }
    let asks = match item.format {
        QaFormat::OpenEnded | QaFormat::Binary => item.question.trim_end().ends_with('?'),
        QaFormat::MultipleChoice => mcq_stem(&item.question, &item.options).ends_with('?'),
        QaFormat::Caption => true,
    };
    if !asks && !item.question.trim().is_empty() {
        v.push("question must end with '?'".to_string());
    }
    v
}

fn normalize_yes_no(answer: &str) -> Option<&'static str> {
    let word: String = answer
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(YES),
        "no" => Some(NO),
        _ => None,
    }
}

/// Trim text fields, canonicalize yes/no answers and resolve MCQ answers
/// that differ from an option only by case or spacing.
pub fn normalize_item(mut item: QaItem) -> QaItem {
    item.question = item.question.trim().to_string();
    item.answer = item.answer.trim().to_string();
    for o in &mut item.options {
        *o = o.trim().to_string();
    }
    match item.format {
        QaFormat::Binary => {
            if let Some(canon) = normalize_yes_no(&item.answer) {
                item.answer = canon.to_string();
            }
        }
        QaFormat::MultipleChoice => {
            let wanted = fold(&item.answer);
            if let Some(pos) = item.options.iter().position(|o| fold(o) == wanted) {
                item.answer = item.options[pos].clone();
                if item.answer_index.is_none() {
                    item.answer_index = Some(pos);
                }
            }
        }
        _ => {}
    }
    item
}

/// Normalize, then check. Returns the normalized item or its violations.
pub fn validate_qa_item(item: QaItem, rules: &ValidationRules) -> Result<QaItem, Vec<String>> {
    let item = normalize_item(item);
    let v = violations(&item, rules);
    if v.is_empty() {
        Ok(item)
    } else {
        Err(v)
    }
}
