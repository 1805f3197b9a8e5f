//! Importing existing caption and QA collections.
//!
//! Each non-blank JSONL line is an object with `audio_id` and either
//! `caption`, or `question` plus `answer`. QA lines may also carry
//! `format`, `options` and `category`.

use serde::Deserialize;

use super::AssemblyError;
use crate::llmgen::{validate_qa_item, ValidationRules};
use crate::qa::{short_id, Method, QaFormat, QaItem, Source};

pub const CAPTION_INSTRUCTION: &str = "Describe the music in detail.";

#[derive(Deserialize)]
struct ImportLine {
    audio_id: Option<String>,
    caption: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    #[serde(default)]
    options: Vec<String>,
    format: Option<String>,
    category: Option<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> AssemblyError {
    AssemblyError::Parse {
        line,
        message: message.into(),
    }
}

fn nonblank(s: Option<String>) -> Option<String> {
    s.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

pub fn import_external(raw: &str, source: Source) -> Result<Vec<QaItem>, AssemblyError> {
    let mut out = Vec::new();
    for (i, text) in raw.lines().enumerate() {
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let rec: ImportLine = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
        let audio_id = nonblank(rec.audio_id).ok_or_else(|| parse_err(line, "missing audio_id"))?;
        let caption = nonblank(rec.caption);
        let question = nonblank(rec.question);
        let answer = nonblank(rec.answer);
        let qa_id = |kind: &str| {
            short_id(&[
                b"import",
                source.as_str().as_bytes(),
                audio_id.as_bytes(),
                kind.as_bytes(),
                &(line as u64).to_le_bytes(),
            ])
        };
        let item = match (caption, question) {
            (Some(_), Some(_)) => return Err(parse_err(line, "line has both caption and question")),
            (None, None) => return Err(parse_err(line, "line has neither caption nor question")),
            (Some(caption), None) => QaItem {
                qa_id: qa_id("caption"),
                audio_id: audio_id.clone(),
                source,
                format: QaFormat::Caption,
                question: CAPTION_INSTRUCTION.to_string(),
                options: Vec::new(),
                answer: caption,
                answer_index: None,
                category: "caption".to_string(),
                method: Method::Imported,
                template_id: None,
                seed: 0,
            },
            (None, Some(question)) => {
                let answer = answer.ok_or_else(|| parse_err(line, "QA line without answer"))?;
                let format = match rec.format.as_deref() {
                    None => QaFormat::OpenEnded,
                    Some(f) => f.parse().map_err(|_| parse_err(line, format!("unknown format {f:?}")))?,
                };
                if format == QaFormat::Caption {
                    return Err(parse_err(line, "QA line cannot use caption format"));
                }
                let item = QaItem {
                    qa_id: qa_id("qa"),
                    audio_id: audio_id.clone(),
                    source,
                    format,
                    question,
                    options: rec.options,
                    answer,
                    answer_index: None,
                    category: nonblank(rec.category).map_or_else(|| "general".to_string(), |c| c.to_lowercase()),
                    method: Method::Imported,
                    template_id: None,
                    seed: 0,
                };
                // Imported collections phrase prompts freely; only structure is enforced.
                match validate_qa_item(item.clone(), &ValidationRules { mcq_options: None }) {
                    Ok(v) => v,
                    Err(errs) => {
                        let hard: Vec<String> =
                            errs.into_iter().filter(|e| !e.starts_with("question must end")).collect();
                        if hard.is_empty() {
                            crate::llmgen::normalize_item(item)
                        } else {
                            return Err(parse_err(line, hard.join("; ")));
                        }
                    }
                }
            }
        };
        out.push(item);
    }
    Ok(out)
}
