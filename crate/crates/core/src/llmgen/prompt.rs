//! Dimension-structured few-shot prompts.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::validate::{validate_qa_item, ValidationRules};
use super::LlmError;
use crate::corpus::ClipRecord;
use crate::qa::{Method, QaFormat, QaItem, Source};

/// An aspect of music understanding that questions are asked about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MusicDimension {
    Instrumentation,
    Melody,
    Tempo,
    Genre,
    Mood,
    Function,
    Other(String),
}

impl MusicDimension {
    pub const NAMED: [MusicDimension; 6] = [
        MusicDimension::Instrumentation,
        MusicDimension::Melody,
        MusicDimension::Tempo,
        MusicDimension::Genre,
        MusicDimension::Mood,
        MusicDimension::Function,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            MusicDimension::Instrumentation => "instrumentation",
            MusicDimension::Melody => "melody",
            MusicDimension::Tempo => "tempo",
            MusicDimension::Genre => "genre",
            MusicDimension::Mood => "mood",
            MusicDimension::Function => "function",
            MusicDimension::Other(tag) => tag,
        }
    }

    /// Known names map to their variant; anything else non-empty becomes `Other`.
    pub fn parse(raw: &str) -> Option<Self> {
        let key = raw.trim().to_lowercase();
        Some(match key.as_str() {
            "" => return None,
            "instrumentation" | "instrument" | "instruments" => MusicDimension::Instrumentation,
            "melody" => MusicDimension::Melody,
            "tempo" => MusicDimension::Tempo,
            "genre" => MusicDimension::Genre,
            "mood" => MusicDimension::Mood,
            "function" => MusicDimension::Function,
            _ => MusicDimension::Other(key),
        })
    }
}

impl fmt::Display for MusicDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for MusicDimension {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MusicDimension {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        MusicDimension::parse(&raw).ok_or_else(|| serde::de::Error::custom("empty dimension"))
    }
}

/// One worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionExample {
    pub dimension: MusicDimension,
    pub format: QaFormat,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub answer: String,
}

impl DimensionExample {
    fn as_item(&self) -> QaItem {
        QaItem {
            qa_id: "example".into(),
            audio_id: "example".into(),
            source: Source::Other,
            format: self.format,
            question: self.question.clone(),
            options: self.options.clone(),
            answer: self.answer.clone(),
            answer_index: None,
            category: self.dimension.to_string(),
            method: Method::Llm,
            template_id: None,
            seed: 0,
        }
    }

    /// The example as the model should reproduce it.
    pub fn to_schema_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("question".into(), self.question.clone().into());
        obj.insert("format".into(), self.format.as_str().into());
        if !self.options.is_empty() {
            obj.insert("options".into(), self.options.clone().into());
        }
        obj.insert("answer".into(), self.answer.clone().into());
        obj.insert("dimension".into(), self.dimension.as_str().into());
        serde_json::Value::Object(obj).to_string()
    }
}

/// Parse a few-shot example file and check every example against the item invariants.
pub fn load_examples(raw: &[u8], rules: &ValidationRules) -> Result<Vec<DimensionExample>, LlmError> {
    let examples: Vec<DimensionExample> =
        serde_json::from_slice(raw).map_err(|e| LlmError::Config(format!("few-shot file: {e}")))?;
    for ex in &examples {
        if ex.format == QaFormat::Caption {
            return Err(LlmError::Config(format!("few-shot example {:?} uses caption format", ex.question)));
        }
        if let Err(v) = validate_qa_item(ex.as_item(), rules) {
            return Err(LlmError::Config(format!(
                "few-shot example {:?} is invalid: {}",
                ex.question,
                v.join("; ")
            )));
        }
    }
    Ok(examples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSlot {
    pub dimension: MusicDimension,
    pub format: QaFormat,
    pub count: u32,
}

/// Default request: one item per (named dimension, format).
pub fn default_request() -> Vec<RequestSlot> {
    MusicDimension::NAMED
        .iter()
        .flat_map(|d| {
            [QaFormat::OpenEnded, QaFormat::Binary, QaFormat::MultipleChoice].map(|format| RequestSlot {
                dimension: d.clone(),
                format,
                count: 1,
            })
        })
        .collect()
}

pub const DEFAULT_SYSTEM_TEXT: &str = "You are a music expert who writes question-answer pairs for training \
music understanding models. Questions must be answerable by listening to the clip. Use only the clip \
information you are given and never invent facts that contradict it.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptConfig {
    pub system_text: String,
    pub mcq_options: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            system_text: DEFAULT_SYSTEM_TEXT.to_string(),
            mcq_options: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub system_text: String,
    pub fewshot: Vec<DimensionExample>,
    pub clip_context: String,
    pub requested: Vec<RequestSlot>,
    pub mcq_options: usize,
}

impl PromptSpec {
    pub fn total_requested(&self) -> u32 {
        self.requested.iter().map(|r| r.count).sum()
    }

    pub fn user_text(&self) -> String {
        let mut s = String::new();
        s.push_str("Write question-answer pairs about one music clip, using the clip information below.\n\n");
        s.push_str("Reply with a JSON array and nothing else. Each element is an object:\n");
        let _ = writeln!(
            s,
            "{{\"question\": string, \"format\": \"open\" | \"binary\" | \"mcq\", \"options\": [string] (mcq only, exactly {} entries), \"answer\": string, \"dimension\": string}}",
            self.mcq_options
        );
        s.push_str("Every question ends with \"?\". Binary answers are exactly \"Yes\" or \"No\". ");
        s.push_str("An mcq answer is copied verbatim from its options, and options are distinct. ");
        s.push_str("Do not put the options inside the question text.\n");
        if !self.fewshot.is_empty() {
            s.push_str("\nExamples:\n");
            for ex in &self.fewshot {
                let _ = writeln!(s, "[{} / {}] {}", ex.dimension, ex.format, ex.to_schema_json());
            }
        }
        s.push_str("\nClip information:\n");
        s.push_str(&self.clip_context);
        if !self.clip_context.ends_with('\n') {
            s.push('\n');
        }
        let _ = writeln!(s, "\nProduce exactly {} items, one per slot:", self.total_requested());
        let mut n = 0;
        for slot in &self.requested {
            for _ in 0..slot.count {
                n += 1;
                let _ = writeln!(s, "{n}. dimension: {}, format: {}", slot.dimension, slot.format);
            }
        }
        s
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage {
                role: "system".into(),
                content: self.system_text.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: self.user_text(),
            },
        ]
    }
}

/// Caption plus metadata, one `key: value` per line in key order.
pub fn render_clip_context(clip: &ClipRecord) -> Option<String> {
    let caption = clip.caption.as_deref().map(str::trim).filter(|c| !c.is_empty());
    let metadata: Vec<(&String, &String)> = clip.metadata.iter().filter(|(_, v)| !v.trim().is_empty()).collect();
    if caption.is_none() && metadata.is_empty() {
        return None;
    }
    let mut s = String::new();
    if let Some(c) = caption {
        let _ = writeln!(s, "Caption: {c}");
    }
    if !metadata.is_empty() {
        s.push_str("Metadata:\n");
        for (k, v) in metadata {
            let _ = writeln!(s, "- {k}: {}", v.trim());
        }
    }
    if let Some(d) = clip.duration_s {
        let _ = writeln!(s, "Duration: {d:.1} s");
    }
    Some(s)
}

pub fn build_prompt(clip: &ClipRecord, examples: &[DimensionExample], requested: &[RequestSlot]) -> Result<PromptSpec, LlmError> {
    build_prompt_with(clip, examples, requested, &PromptConfig::default())
}

/// Few-shot examples are those whose (dimension, format) is requested, in file order.
pub fn build_prompt_with(
    clip: &ClipRecord,
    examples: &[DimensionExample],
    requested: &[RequestSlot],
    config: &PromptConfig,
) -> Result<PromptSpec, LlmError> {
    let clip_context = render_clip_context(clip).ok_or_else(|| LlmError::NoContext(clip.audio_id.clone()))?;
    if let Some(bad) = requested.iter().find(|r| r.count == 0) {
        return Err(LlmError::Config(format!("requested count for {} / {} is zero", bad.dimension, bad.format)));
    }
    if requested.is_empty() {
        return Err(LlmError::Config("empty request".into()));
    }
    let fewshot = examples
        .iter()
        .filter(|ex| requested.iter().any(|r| r.dimension == ex.dimension && r.format == ex.format))
        .cloned()
        .collect();
    Ok(PromptSpec {
        system_text: config.system_text.clone(),
        fewshot,
        clip_context,
        requested: requested.to_vec(),
        mcq_options: config.mcq_options,
    })
}
