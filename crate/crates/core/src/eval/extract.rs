//! Mapping free-form model text onto a choice.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionRule {
    /// First standalone option letter.
    Letter,
    /// Longest option text contained in the output.
    Text,
}

pub const DEFAULT_ORDER: [ExtractionRule; 2] = [ExtractionRule::Letter, ExtractionRule::Text];

/// Standalone letters, in order: alphabetic ASCII characters with a
/// non-alphanumeric (or nothing) on each side.
fn standalone_letters(folded: &str) -> impl Iterator<Item = char> + '_ {
    let chars: Vec<char> = folded.chars().collect();
    (0..chars.len()).filter_map(move |i| {
        let c = chars[i];
        let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let after_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        (c.is_ascii_alphabetic() && before_ok && after_ok).then_some(c)
    })
}

fn by_letter(folded: &str, n: usize) -> Option<usize> {
    standalone_letters(folded)
        .map(|c| (c as u8 - b'a') as usize)
        .find(|&i| i < n)
}

fn by_text(folded: &str, options: &[String]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, opt) in options.iter().enumerate() {
        let o = opt.trim().to_lowercase();
        if o.is_empty() || !folded.contains(&o) {
            continue;
        }
        let len = o.chars().count();
        if best.is_none_or(|(_, l)| len > l) {
            best = Some((i, len));
        }
    }
    best.map(|(i, _)| i)
}

pub fn extract_mcq_answer(output: &str, options: &[String]) -> Option<usize> {
    extract_mcq_answer_with(output, options, &DEFAULT_ORDER)
}

/// Letters beyond the option count are skipped, so "I think B" picks B
/// among four options.
pub fn extract_mcq_answer_with(output: &str, options: &[String], order: &[ExtractionRule]) -> Option<usize> {
    let folded = output.to_lowercase();
    order.iter().find_map(|rule| match rule {
        ExtractionRule::Letter => by_letter(&folded, options.len().min(26)),
        ExtractionRule::Text => by_text(&folded, options),
    })
}

/// `Some(true)` for yes, `Some(false)` for no, from the first standalone
/// yes/no word.
pub fn extract_yes_no(output: &str) -> Option<bool> {
    output
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|tok| match tok {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        })
}
