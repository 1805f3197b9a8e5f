//! Core record types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Where a clip (and every item derived from it) comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    MusicCaps,
    MagnaTagATune,
    Fma,
    AudioSet,
    Other,
}

impl Source {
    /// Row order used by the statistics table.
    pub const TABLE_ORDER: [Source; 4] = [
        Source::MusicCaps,
        Source::MagnaTagATune,
        Source::Fma,
        Source::AudioSet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::MusicCaps => "MusicCaps",
            Source::MagnaTagATune => "MagnaTagATune",
            Source::Fma => "FMA",
            Source::AudioSet => "AudioSet",
            Source::Other => "Other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown source {0:?}")]
pub struct UnknownSource(pub String);

impl FromStr for Source {
    type Err = UnknownSource;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "musiccaps" => Ok(Source::MusicCaps),
            "magnatagatune" | "mtt" => Ok(Source::MagnaTagATune),
            "fma" => Ok(Source::Fma),
            "audioset" => Ok(Source::AudioSet),
            "other" => Ok(Source::Other),
            _ => Err(UnknownSource(s.to_string())),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Task format of a generated item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QaFormat {
    OpenEnded,
    Binary,
    MultipleChoice,
    Caption,
}

impl QaFormat {
    pub const ALL: [QaFormat; 4] = [
        QaFormat::OpenEnded,
        QaFormat::Binary,
        QaFormat::MultipleChoice,
        QaFormat::Caption,
    ];

    /// Wire name used in template files, item JSONL and CLI flags.
    pub fn as_str(self) -> &'static str {
        match self {
            QaFormat::OpenEnded => "open",
            QaFormat::Binary => "binary",
            QaFormat::MultipleChoice => "mcq",
            QaFormat::Caption => "caption",
        }
    }
}

impl fmt::Display for QaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown QA format {0:?}")]
pub struct UnknownFormat(pub String);

impl FromStr for QaFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "open" | "openended" | "qa" => Ok(QaFormat::OpenEnded),
            "binary" | "yesno" | "bool" => Ok(QaFormat::Binary),
            "mcq" | "multiplechoice" | "choice" => Ok(QaFormat::MultipleChoice),
            "caption" | "captioning" => Ok(QaFormat::Caption),
            _ => Err(UnknownFormat(s.to_string())),
        }
    }
}

impl Serialize for QaFormat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for QaFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// How an item was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rule,
    Llm,
    Imported,
}

/// One (audio, question, answer) sample. Field order is the JSONL wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub qa_id: String,
    pub audio_id: String,
    pub source: Source,
    pub format: QaFormat,
    pub question: String,
    #[serde(default)]
    pub options: Vec<String>,
    pub answer: String,
    #[serde(default)]
    pub answer_index: Option<usize>,
    pub category: String,
    pub method: Method,
    #[serde(default)]
    pub template_id: Option<String>,
    pub seed: u64,
}

impl QaItem {
    /// Serialize as one JSONL line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("QaItem serialization is infallible")
    }
}

pub const YES: &str = "Yes";
pub const NO: &str = "No";

/// Letter label for a 0-based option index ("A", "B", ...).
pub fn option_letter(index: usize) -> char {
    debug_assert!(index < 26);
    (b'A' + index as u8) as char
}

/// Renders options as `A. x B. y C. z`, the block appended to MCQ stems.
pub fn render_options(options: &[String]) -> String {
    let mut out = String::new();
    for (i, opt) in options.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push(option_letter(i));
        out.push_str(". ");
        out.push_str(opt);
    }
    out
}

/// Length-prefixed SHA-256 over a sequence of fields. Length prefixes keep
/// `("ab", "c")` and `("a", "bc")` apart.
pub(crate) fn hash_fields(fields: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for f in fields {
        hasher.update((f.len() as u64).to_le_bytes());
        hasher.update(f);
    }
    hasher.finalize().into()
}

pub(crate) fn hash_u64(fields: &[&[u8]]) -> u64 {
    let digest = hash_fields(fields);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// 16 hex chars (64 bits) of the field hash.
pub(crate) fn short_id(fields: &[&[u8]]) -> String {
    hex::encode(&hash_fields(fields)[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_aliases_parse() {
        assert_eq!("MTT".parse::<Source>().unwrap(), Source::MagnaTagATune);
        assert_eq!("Magna-Tag-A-Tune".parse::<Source>().unwrap(), Source::MagnaTagATune);
        assert_eq!("fma".parse::<Source>().unwrap(), Source::Fma);
        assert!("spotify".parse::<Source>().is_err());
    }

    #[test]
    fn item_json_field_order_is_fixed() {
        let item = QaItem {
            qa_id: "x".into(),
            audio_id: "a".into(),
            source: Source::AudioSet,
            format: QaFormat::Binary,
            question: "Is violin present in the music?".into(),
            options: vec![],
            answer: "No".into(),
            answer_index: None,
            category: "musical instrument".into(),
            method: Method::Rule,
            template_id: Some("bin-1".into()),
            seed: 7,
        };
        assert_eq!(
            item.to_json_line(),
            r#"{"qa_id":"x","audio_id":"a","source":"AudioSet","format":"binary","question":"Is violin present in the music?","options":[],"answer":"No","answer_index":null,"category":"musical instrument","method":"rule","template_id":"bin-1","seed":7}"#
        );
        let back: QaItem = serde_json::from_str(&item.to_json_line()).unwrap();
        assert_eq!(back, item);
    }

    #[test]
    fn options_render_lettered() {
        let opts: Vec<String> = ["Guitar", "Violin", "Ukulele", "Cello"].map(String::from).to_vec();
        assert_eq!(render_options(&opts), "A. Guitar B. Violin C. Ukulele D. Cello");
    }

    #[test]
    fn field_hash_is_length_prefixed() {
        assert_ne!(hash_u64(&[b"ab", b"c"]), hash_u64(&[b"a", b"bc"]));
    }
}
