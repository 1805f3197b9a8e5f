//! Clip manifests: loading, music-leaf filtering and label frequencies.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::ontology::{LabelId, Ontology, OntologyError};
use crate::qa::Source;

/// Metadata key under which tags that have no ontology alias are kept.
pub const UNMAPPED_TAGS_KEY: &str = "tags";

/// Metadata for one audio clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub audio_id: String,
    pub source: Source,
    pub labels: BTreeSet<LabelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate clip ({origin}, {audio_id})")]
    DuplicateClip {
        line: usize,
        origin: Source,
        audio_id: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Load a JSONL manifest; blank lines are skipped, line numbers are 1-based.
pub fn load_manifest<R: BufRead>(reader: R) -> Result<Vec<ClipRecord>, CorpusError> {
    let mut clips = Vec::new();
    let mut seen: HashSet<(Source, String)> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let clip: ClipRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if clip.audio_id.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty audio_id".into(),
            });
        }
        if !seen.insert((clip.source, clip.audio_id.clone())) {
            return Err(CorpusError::DuplicateClip {
                line: line_no,
                origin: clip.source,
                audio_id: clip.audio_id,
            });
        }
        clips.push(clip);
    }
    Ok(clips)
}

/// Write clips back as JSONL.
pub fn write_manifest<W: std::io::Write>(clips: &[ClipRecord], mut w: W) -> std::io::Result<()> {
    for clip in clips {
        serde_json::to_writer(&mut w, clip)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keep clips carrying at least one leaf of the music subtree rooted at
/// `music_root`. Clips with only parent-level labels are dropped. Input
/// order is preserved.
pub fn filter_music_clips(
    clips: &[ClipRecord],
    ontology: &Ontology,
    music_root: &LabelId,
) -> Result<Vec<ClipRecord>, OntologyError> {
    let leaves = ontology.leaf_labels(music_root)?;
    Ok(filter_by_leaves(clips, &leaves, ontology))
}

/// [`filter_music_clips`] with a precomputed leaf set.
pub fn filter_by_leaves(clips: &[ClipRecord], music_leaves: &BTreeSet<LabelId>, ontology: &Ontology) -> Vec<ClipRecord> {
    clips
        .iter()
        .filter(|clip| {
            for label in &clip.labels {
                if !ontology.contains(label) {
                    log::debug!("clip {}: label {} not in ontology", clip.audio_id, label);
                }
            }
            clip.labels.iter().any(|l| music_leaves.contains(l))
        })
        .cloned()
        .collect()
}

/// Occurrence counts of music leaves over a (filtered) corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFrequencyTable {
    pub counts: BTreeMap<LabelId, u64>,
    pub total: u64,
}

impl LabelFrequencyTable {
    pub fn get(&self, label: &LabelId) -> u64 {
        self.counts.get(label).copied().unwrap_or(0)
    }
}

pub fn compute_label_frequencies(
    clips: &[ClipRecord],
    ontology: &Ontology,
    music_root: &LabelId,
) -> Result<LabelFrequencyTable, OntologyError> {
    let leaves = ontology.leaf_labels(music_root)?;
    Ok(count_leaves(clips, &leaves))
}

/// [`compute_label_frequencies`] with a precomputed leaf set.
pub fn count_leaves(clips: &[ClipRecord], music_leaves: &BTreeSet<LabelId>) -> LabelFrequencyTable {
    let mut table = LabelFrequencyTable::default();
    for clip in clips {
        for label in clip.labels.iter().filter(|l| music_leaves.contains(*l)) {
            *table.counts.entry(label.clone()).or_insert(0) += 1;
            table.total += 1;
        }
    }
    table
}

/// Map free-form tags to ontology labels. Labels that already exist in the
/// ontology pass through; aliased tags are replaced (case-insensitive
/// lookup); the rest move to `metadata["tags"]` as a `;`-joined list.
pub fn apply_aliases(clip: &mut ClipRecord, aliases: &BTreeMap<String, LabelId>, ontology: &Ontology) {
    let folded: BTreeMap<String, &LabelId> = aliases
        .iter()
        .map(|(k, v)| (k.trim().to_lowercase(), v))
        .collect();
    let mut mapped = BTreeSet::new();
    let mut unmapped = Vec::new();
    for label in std::mem::take(&mut clip.labels) {
        if ontology.contains(&label) {
            mapped.insert(label);
        } else if let Some(target) = folded.get(&label.as_str().trim().to_lowercase()) {
            mapped.insert((*target).clone());
        } else {
            unmapped.push(label.as_str().to_string());
        }
    }
    clip.labels = mapped;
    if !unmapped.is_empty() {
        let entry = clip.metadata.entry(UNMAPPED_TAGS_KEY.to_string()).or_default();
        for tag in unmapped {
            if !entry.is_empty() {
                entry.push(';');
            }
            entry.push_str(&tag);
        }
    }
}

/// Converters from per-source native metadata files into [`ClipRecord`]s.
pub mod adapters {
    use super::*;

    fn parse_list(raw: &str) -> Vec<String> {
        // Python-style list literal: ['a', 'b'] or a plain comma list.
        raw.trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .split(',')
            .map(|s| s.trim().trim_matches(|c| c == '\'' || c == '"').trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// MusicCaps CSV (`ytid,start_s,end_s,audioset_positive_labels,aspect_list,caption,...`).
    pub fn musiccaps_csv<R: std::io::Read>(reader: R) -> Result<Vec<ClipRecord>, CorpusError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let ytid = col("ytid").ok_or_else(|| CorpusError::Parse {
            line: 1,
            message: "missing ytid column".into(),
        })?;
        let (start, end) = (col("start_s"), col("end_s"));
        let labels = col("audioset_positive_labels");
        let aspects = col("aspect_list");
        let caption = col("caption");
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let get = |c: Option<usize>| c.and_then(|i| rec.get(i)).unwrap_or("");
            let mut metadata = BTreeMap::new();
            let aspect_list = parse_list(get(aspects));
            if !aspect_list.is_empty() {
                metadata.insert("aspects".to_string(), aspect_list.join(";"));
            }
            let duration = match (get(start).parse::<f64>(), get(end).parse::<f64>()) {
                (Ok(s), Ok(e)) if e > s => Some(e - s),
                _ => None,
            };
            let cap = get(caption).trim();
            out.push(ClipRecord {
                audio_id: rec.get(ytid).unwrap_or("").to_string(),
                source: Source::MusicCaps,
                labels: parse_list(get(labels)).into_iter().map(LabelId::new).collect(),
                caption: (!cap.is_empty()).then(|| cap.to_string()),
                metadata,
                duration_s: duration,
            });
        }
        Ok(out)
    }

    /// MagnaTagATune `annotations_final.csv`: tab-separated, `clip_id`, one
    /// 0/1 column per tag, `mp3_path`. Active tags become labels (to be
    /// resolved through the alias table).
    pub fn mtt_annotations<R: std::io::Read>(reader: R) -> Result<Vec<ClipRecord>, CorpusError> {
        let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim_matches('"').to_string()).collect();
        let id_col = headers.iter().position(|h| h == "clip_id").ok_or_else(|| CorpusError::Parse {
            line: 1,
            message: "missing clip_id column".into(),
        })?;
        let path_col = headers.iter().position(|h| h == "mp3_path");
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut labels = BTreeSet::new();
            for (i, value) in rec.iter().enumerate() {
                if i == id_col || Some(i) == path_col {
                    continue;
                }
                if value.trim_matches('"') == "1" {
                    labels.insert(LabelId::new(headers[i].clone()));
                }
            }
            let mut metadata = BTreeMap::new();
            if let Some(p) = path_col.and_then(|i| rec.get(i)) {
                metadata.insert("mp3_path".to_string(), p.trim_matches('"').to_string());
            }
            out.push(ClipRecord {
                audio_id: rec.get(id_col).unwrap_or("").trim_matches('"').to_string(),
                source: Source::MagnaTagATune,
                labels,
                caption: None,
                metadata,
                duration_s: None,
            });
        }
        Ok(out)
    }

    /// FMA `tracks.csv` (three header rows: section, field, then `track_id`).
    /// Uses `track.genre_top` as the label, `track.title`/`artist.name`/
    /// `track.tags` as metadata.
    pub fn fma_tracks<R: std::io::Read>(reader: R) -> Result<Vec<ClipRecord>, CorpusError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut rows = rdr.records();
        let mut header_row = |line| -> Result<Vec<String>, CorpusError> {
            match rows.next() {
                Some(r) => Ok(r?.iter().map(str::to_string).collect()),
                None => Err(CorpusError::Parse {
                    line,
                    message: "truncated FMA header".into(),
                }),
            }
        };
        let sections = header_row(1)?;
        let fields = header_row(2)?;
        header_row(3)?;
        let find = |sec: &str, field: &str| {
            sections
                .iter()
                .zip(&fields)
                .position(|(s, f)| s == sec && f == field)
        };
        let genre = find("track", "genre_top");
        let title = find("track", "title");
        let tags = find("track", "tags");
        let artist = find("artist", "name");
        let duration = find("track", "duration");
        let mut out = Vec::new();
        for rec in rows {
            let rec = rec?;
            let get = |c: Option<usize>| c.and_then(|i| rec.get(i)).unwrap_or("").trim();
            let mut metadata = BTreeMap::new();
            for (key, c) in [("title", title), ("artist", artist)] {
                if !get(c).is_empty() {
                    metadata.insert(key.to_string(), get(c).to_string());
                }
            }
            let tag_list = parse_list(get(tags));
            if !tag_list.is_empty() {
                metadata.insert("fma_tags".to_string(), tag_list.join(";"));
            }
            let mut labels = BTreeSet::new();
            if !get(genre).is_empty() {
                labels.insert(LabelId::new(get(genre)));
                metadata.insert("genre".to_string(), get(genre).to_string());
            }
            out.push(ClipRecord {
                audio_id: rec.get(0).unwrap_or("").to_string(),
                source: Source::Fma,
                labels,
                caption: None,
                metadata,
                duration_s: get(duration).parse().ok(),
            });
        }
        Ok(out)
    }

}
