//! Turning free-form model replies into validated items.
//!
//! The reply is scanned for JSON arrays. The first array holding at least one
//! object is used; failing that, an array of scalars, but only if it is the
//! first `[` in the text (so the `options` list of a truncated object is never
//! mistaken for the payload). Code fences,
//! prose before or after, and nested arrays are all tolerated because the
//! scan only looks at what parses.

use serde_json::Value;

use super::validate::{validate_qa_item, ValidationRules};
use crate::corpus::ClipRecord;
use crate::qa::{hash_u64, option_letter, render_options, short_id, Method, QaFormat, QaItem, NO, YES};

const FRAGMENT_LIMIT: usize = 400;
const MAX_ARRAY_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub fragment: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponseBatch {
    pub raw_text: String,
    pub parsed: Vec<QaItem>,
    pub rejected: Vec<Rejected>,
}

fn clip_fragment(s: &str) -> String {
    if s.chars().count() <= FRAGMENT_LIMIT {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(FRAGMENT_LIMIT).collect();
        out.push('…');
        out
    }
}

/// Payload array of `raw`; see the module docs for the rule.
fn find_array(raw: &str) -> Option<Vec<Value>> {
    let mut first_any: Option<Vec<Value>> = None;
    let mut pos = 0;
    let mut attempts = 0;
    while let Some(off) = raw[pos..].find('[') {
        let start = pos + off;
        attempts += 1;
        if attempts > MAX_ARRAY_ATTEMPTS {
            break;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => {
                if items.iter().any(Value::is_object) {
                    return Some(items);
                }
                if attempts == 1 {
                    first_any = Some(items);
                }
                // Arrays nested inside this one are not candidates.
                pos = start + stream.byte_offset().max(1);
            }
            _ => pos = start + 1,
        }
    }
    first_any
}

fn text_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<Option<String>, String> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(format!("field {name} must be a string")),
    }
}

fn answer_field(obj: &serde_json::Map<String, Value>) -> Result<String, String> {
    match obj.get("answer") {
        None | Some(Value::Null) => Err("missing field answer".into()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Bool(b)) => Ok(if *b { YES } else { NO }.to_string()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err("field answer must be a string".into()),
    }
}

fn options_field(obj: &serde_json::Map<String, Value>) -> Result<Vec<String>, String> {
    match obj.get("options").or_else(|| obj.get("choices")) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(xs)) => xs
            .iter()
            .map(|x| match x {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err("options must be strings".to_string()),
            })
            .collect(),
        Some(_) => Err("options must be an array".into()),
    }
}

/// `"B"` or `"B."` or `"(B)"` naming an option by letter.
fn letter_index(answer: &str, n: usize) -> Option<usize> {
    let core = answer.trim().trim_matches(|c: char| c == '(' || c == ')' || c == '.' || c == ':');
    let mut chars = core.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    let i = (c.to_ascii_uppercase() as u8 - b'A') as usize;
    (i < n && option_letter(i) == c.to_ascii_uppercase()).then_some(i)
}

fn build_item(value: &Value, index: usize, clip: &ClipRecord, seed: u64) -> Result<QaItem, String> {
    let obj = value.as_object().ok_or("element is not an object")?;
    let question = text_field(obj, "question")?.ok_or("missing field question")?;
    let format_raw = text_field(obj, "format")?.ok_or("missing field format")?;
    let format: QaFormat = format_raw
        .parse()
        .map_err(|_| format!("unknown format {format_raw:?}"))?;
    if format == QaFormat::Caption {
        return Err("caption format is not generated by the model".into());
    }
    let mut options = options_field(obj)?;
    let mut answer = answer_field(obj)?;
    let category = match text_field(obj, "dimension")? {
        Some(d) if !d.trim().is_empty() => d.trim().to_lowercase(),
        _ => "general".to_string(),
    };
    let mut answer_index = None;
    let mut question = question.trim().to_string();
    if format == QaFormat::MultipleChoice {
        for o in &mut options {
            *o = o.trim().to_string();
        }
        let folded = answer.trim().to_lowercase();
        answer_index = options.iter().position(|o| o.to_lowercase() == folded);
        if answer_index.is_none() {
            if let Some(i) = letter_index(&answer, options.len()) {
                answer_index = Some(i);
            }
        }
        if let Some(i) = answer_index {
            answer = options[i].clone();
        }
        if !options.is_empty() {
            let block = render_options(&options);
            if !question.ends_with(block.as_str()) {
                question = format!("{question} {block}");
            }
        }
    }
    let qa_id = short_id(&[
        b"llm",
        clip.source.as_str().as_bytes(),
        clip.audio_id.as_bytes(),
        &(index as u64).to_le_bytes(),
        question.as_bytes(),
    ]);
    Ok(QaItem {
        qa_id,
        audio_id: clip.audio_id.clone(),
        source: clip.source,
        format,
        question,
        options,
        answer,
        answer_index,
        category,
        method: Method::Llm,
        template_id: None,
        seed,
    })
}

pub fn parse_llm_output(raw: &str, clip: &ClipRecord) -> LlmResponseBatch {
    parse_llm_output_with(raw, clip, &ValidationRules::default())
}

/// Never fails: anything that cannot become a valid item is returned in `rejected`.
pub fn parse_llm_output_with(raw: &str, clip: &ClipRecord, rules: &ValidationRules) -> LlmResponseBatch {
    let mut batch = LlmResponseBatch {
        raw_text: raw.to_string(),
        parsed: Vec::new(),
        rejected: Vec::new(),
    };
    let Some(values) = find_array(raw) else {
        batch.rejected.push(Rejected {
            fragment: clip_fragment(raw),
            reason: "no JSON array found".into(),
        });
        return batch;
    };
    let seed = hash_u64(&[b"llm-response", raw.as_bytes()]);
    for (i, value) in values.iter().enumerate() {
        let outcome = build_item(value, i, clip, seed)
            .and_then(|item| validate_qa_item(item, rules).map_err(|v| v.join("; ")));
        match outcome {
            Ok(item) => batch.parsed.push(item),
            Err(reason) => batch.rejected.push(Rejected {
                fragment: clip_fragment(&value.to_string()),
                reason,
            }),
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::Source;

    fn clip() -> ClipRecord {
        ClipRecord {
            audio_id: "yt-abc".into(),
            source: Source::MusicCaps,
            labels: Default::default(),
            caption: Some("A mellow piano ballad.".into()),
            metadata: Default::default(),
            duration_s: None,
        }
    }

    #[test]
    fn two_items_parse() {
        let raw = r#"[{"question":"Is there a piano?","format":"binary","answer":"yes","dimension":"instrumentation"},
                      {"question":"What is the mood?","format":"open","answer":"Mellow and calm.","dimension":"Mood"}]"#;
        let b = parse_llm_output(raw, &clip());
        assert_eq!(b.parsed.len(), 2, "{:?}", b.rejected);
        assert!(b.rejected.is_empty());
        assert_eq!(b.parsed[0].answer, "Yes");
        assert_eq!(b.parsed[1].category, "mood");
        assert!(b.parsed.iter().all(|i| i.method == Method::Llm && i.audio_id == "yt-abc"));
        assert_ne!(b.parsed[0].qa_id, b.parsed[1].qa_id);
    }

    #[test]
    fn answer_outside_options_is_rejected() {
        let raw = r#"[{"question":"Which instrument leads?","format":"mcq","options":["Piano","Violin","Flute","Harp"],"answer":"Cello"}]"#;
        let b = parse_llm_output(raw, &clip());
        assert!(b.parsed.is_empty());
        assert_eq!(b.rejected[0].reason, "answer not in options");
    }

    #[test]
    fn fenced_json_after_prose() {
        let raw = "Sure! Here are the pairs [as requested]:\n```json\n[{\"question\":\"Which instrument leads?\",\"format\":\"mcq\",\"options\":[\"Piano\",\"Violin\",\"Flute\",\"Harp\"],\"answer\":\"B\"}]\n```\nHope this helps.";
        let b = parse_llm_output(raw, &clip());
        assert_eq!(b.parsed.len(), 1, "{:?}", b.rejected);
        let item = &b.parsed[0];
        assert_eq!(item.answer, "Violin");
        assert_eq!(item.answer_index, Some(1));
        assert_eq!(item.question, "Which instrument leads? A. Piano B. Violin C. Flute D. Harp");
    }

    #[test]
    fn missing_format_and_garbage() {
        let b = parse_llm_output(r#"[{"question":"Is it fast?","answer":"No"}, 3]"#, &clip());
        assert_eq!(b.rejected.len(), 2);
        assert_eq!(b.rejected[0].reason, "missing field format");
        assert_eq!(b.rejected[1].reason, "element is not an object");
        let b = parse_llm_output("I cannot help with that.", &clip());
        assert_eq!(b.rejected[0].reason, "no JSON array found");
    }

    #[test]
    fn seed_and_ids_are_deterministic() {
        let raw = r#"[{"question":"Is there a piano?","format":"binary","answer":"No"}]"#;
        assert_eq!(parse_llm_output(raw, &clip()), parse_llm_output(raw, &clip()));
    }
}
