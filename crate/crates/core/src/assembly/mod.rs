//! Merging item sets into the released dataset: dedup, audio-level splits,
//! JSONL shards and summary statistics.

mod import;
mod shard;
mod stats;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use import::{import_external, CAPTION_INSTRUCTION};
pub use shard::{read_manifest, read_shards, shard_name, write_shards, ShardEntry, ShardManifest, MANIFEST_FILE};
pub use stats::{compute_stats, humanize, DatasetStats, StatsRow, StatsTable, Task};

use crate::fsutil::write_atomic;
use crate::qa::{hash_u64, QaFormat, QaItem};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("bad split ratios: {0}")]
    BadRatio(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("digest mismatch for {path}: manifest {expected}, file {actual}")]
    Digest { path: String, expected: String, actual: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Case-folded, whitespace-collapsed text.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Items with equal keys are duplicates. Caption items also key on their
/// answer, so several reference captions of one clip all survive.
pub fn dedup_key(item: &QaItem) -> (String, String, Option<String>) {
    let answer = (item.format == QaFormat::Caption).then(|| normalize_text(&item.answer));
    (item.audio_id.clone(), normalize_text(&item.question), answer)
}

/// Keeps the smallest `qa_id` of each duplicate group; output sorted by `qa_id`.
pub fn deduplicate(mut items: Vec<QaItem>) -> Vec<QaItem> {
    items.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    let mut seen = HashSet::with_capacity(items.len());
    items.retain(|item| seen.insert(dedup_key(item)));
    items
}

pub fn retain_formats(items: Vec<QaItem>, keep: &BTreeSet<QaFormat>) -> Vec<QaItem> {
    items.into_iter().filter(|i| keep.contains(&i.format)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, AssemblyError> {
        let r = SplitRatios { train, val, test };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), AssemblyError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(AssemblyError::BadRatio(format!("ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AssemblyError::BadRatio(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Uniform value in [0, 1) fixed by the audio id and seed.
pub fn split_point(audio_id: &str, global_seed: u64) -> f64 {
    let h = hash_u64(&[b"split", &global_seed.to_le_bytes(), audio_id.as_bytes()]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub fn split_for(audio_id: &str, ratios: &SplitRatios, global_seed: u64) -> Split {
    let u = split_point(audio_id, global_seed);
    if u < ratios.train {
        Split::Train
    } else if u < ratios.train + ratios.val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitAssignment {
    pub split_of: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, audio_id: &str) -> Option<Split> {
        self.split_of.get(audio_id).copied()
    }

    /// Items grouped by their clip's split.
    pub fn partition(&self, items: Vec<QaItem>) -> BTreeMap<Split, Vec<QaItem>> {
        let mut out: BTreeMap<Split, Vec<QaItem>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
        for item in items {
            let split = self.get(&item.audio_id).expect("assignment covers every audio id");
            out.get_mut(&split).unwrap().push(item);
        }
        out
    }
}

pub fn split_by_audio(items: &[QaItem], ratios: &SplitRatios, global_seed: u64) -> Result<SplitAssignment, AssemblyError> {
    ratios.check()?;
    let mut split_of = BTreeMap::new();
    for item in items {
        if !split_of.contains_key(&item.audio_id) {
            split_of.insert(item.audio_id.clone(), split_for(&item.audio_id, ratios, global_seed));
        }
    }
    Ok(SplitAssignment { split_of })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyConfig {
    pub global_seed: u64,
    pub ratios: SplitRatios,
    pub shard_size: usize,
    /// `None` keeps every format.
    pub keep_formats: Option<BTreeSet<QaFormat>>,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            global_seed: 0,
            ratios: SplitRatios::default(),
            shard_size: 100_000,
            keep_formats: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssemblyReport {
    pub input_items: u64,
    pub dropped_by_format: u64,
    pub duplicates_removed: u64,
    pub splits: BTreeMap<Split, ShardManifest>,
    pub stats: DatasetStats,
}

/// Dedups, filters and splits `items`, then writes `<out>/<split>/shard-*.jsonl`
/// plus `<out>/stats.json`.
pub fn assemble_dataset(items: Vec<QaItem>, config: &AssemblyConfig, out_dir: &Path) -> Result<AssemblyReport, AssemblyError> {
    config.ratios.check()?;
    let input_items = items.len() as u64;
    let items = deduplicate(items);
    let duplicates_removed = input_items - items.len() as u64;
    let before = items.len() as u64;
    let items = match &config.keep_formats {
        Some(keep) => retain_formats(items, keep),
        None => items,
    };
    let dropped_by_format = before - items.len() as u64;
    let stats = compute_stats(&items);
    let assignment = split_by_audio(&items, &config.ratios, config.global_seed)?;
    let mut splits = BTreeMap::new();
    for (split, part) in assignment.partition(items) {
        let manifest = write_shards(&part, config.shard_size, &out_dir.join(split.as_str()))?;
        splits.insert(split, manifest);
    }
    write_atomic(&out_dir.join("stats.json"), stats.to_json().as_bytes())?;
    Ok(AssemblyReport {
        input_items,
        dropped_by_format,
        duplicates_removed,
        splits,
        stats,
    })
}
