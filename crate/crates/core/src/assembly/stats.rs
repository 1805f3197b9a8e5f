//! Per-source, per-task counts laid out like the dataset statistics table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::qa::{QaFormat, QaItem, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Task {
    Captioning,
    #[serde(rename = "QA")]
    Qa,
    #[serde(rename = "MCQ")]
    Mcq,
    Binary,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Captioning, Task::Qa, Task::Mcq, Task::Binary];

    pub fn of(format: QaFormat) -> Task {
        match format {
            QaFormat::Caption => Task::Captioning,
            QaFormat::OpenEnded => Task::Qa,
            QaFormat::MultipleChoice => Task::Mcq,
            QaFormat::Binary => Task::Binary,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Captioning => "Captioning",
            Task::Qa => "QA",
            Task::Mcq => "MCQ",
            Task::Binary => "Binary",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Counts are additive under [`DatasetStats::merge`]; audio sets merge by union.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetStats {
    tasks: BTreeMap<Source, [u64; 4]>,
    audios: BTreeMap<Source, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    pub source: String,
    pub audios: u64,
    pub captioning: u64,
    pub qa: u64,
    pub mcq: u64,
    pub binary: u64,
    pub total: u64,
    /// The same numbers rounded for display ("98k", "1.9M").
    pub display: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsTable {
    pub columns: Vec<String>,
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

impl DatasetStats {
    pub fn add(&mut self, item: &QaItem) {
        self.tasks.entry(item.source).or_default()[Task::of(item.format).slot()] += 1;
        self.audios.entry(item.source).or_default().insert(item.audio_id.clone());
    }

    pub fn merge(mut self, other: DatasetStats) -> DatasetStats {
        for (s, counts) in other.tasks {
            let mine = self.tasks.entry(s).or_default();
            for (a, b) in mine.iter_mut().zip(counts) {
                *a += b;
            }
        }
        for (s, ids) in other.audios {
            self.audios.entry(s).or_default().extend(ids);
        }
        self
    }

    pub fn count(&self, source: Source, task: Task) -> u64 {
        self.tasks.get(&source).map_or(0, |c| c[task.slot()])
    }

    pub fn audios(&self, source: Source) -> u64 {
        self.audios.get(&source).map_or(0, |s| s.len() as u64)
    }

    pub fn source_total(&self, source: Source) -> u64 {
        self.tasks.get(&source).map_or(0, |c| c.iter().sum())
    }

    pub fn task_total(&self, task: Task) -> u64 {
        self.tasks.values().map(|c| c[task.slot()]).sum()
    }

    pub fn total_audios(&self) -> u64 {
        self.audios.values().map(|s| s.len() as u64).sum()
    }

    pub fn grand_total(&self) -> u64 {
        self.tasks.values().flat_map(|c| c.iter()).sum()
    }

    fn row(&self, label: &str, audios: u64, counts: [u64; 4]) -> StatsRow {
        let total = counts.iter().sum();
        let mut display = BTreeMap::new();
        display.insert("Audios".to_string(), humanize(audios));
        for t in Task::ALL {
            display.insert(t.as_str().to_string(), humanize(counts[t.slot()]));
        }
        display.insert("Total".to_string(), humanize(total));
        StatsRow {
            source: label.to_string(),
            audios,
            captioning: counts[0],
            qa: counts[1],
            mcq: counts[2],
            binary: counts[3],
            total,
            display,
        }
    }

    /// Rows for the four named sources, plus `Other` when it has items.
    pub fn table(&self) -> StatsTable {
        let mut sources: Vec<Source> = Source::TABLE_ORDER.to_vec();
        if self.source_total(Source::Other) > 0 {
            sources.push(Source::Other);
        }
        let rows = sources
            .iter()
            .map(|&s| self.row(s.as_str(), self.audios(s), self.tasks.get(&s).copied().unwrap_or_default()))
            .collect();
        let totals = Task::ALL.map(|t| self.task_total(t));
        StatsTable {
            columns: ["Audios", "Captioning", "QA", "MCQ", "Binary", "Total"].map(String::from).to_vec(),
            rows,
            total: self.row("Total", self.total_audios(), totals),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.table()).expect("stats serialize")
    }

    /// Plain-text table with rounded counts.
    pub fn render_text(&self) -> String {
        let table = self.table();
        let mut out = String::new();
        let _ = write!(out, "{:<14}", "Audio Sources");
        for c in &table.columns {
            let _ = write!(out, "{c:>11}");
        }
        out.push('\n');
        for row in table.rows.iter().chain(std::iter::once(&table.total)) {
            let _ = write!(out, "{:<14}", row.source);
            for c in &table.columns {
                let _ = write!(out, "{:>11}", row.display[c]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn compute_stats(items: &[QaItem]) -> DatasetStats {
    items
        .par_chunks(16_384)
        .map(|chunk| {
            let mut s = DatasetStats::default();
            for item in chunk {
                s.add(item);
            }
            s
        })
        .reduce(DatasetStats::default, DatasetStats::merge)
}

/// Count rounded the way the statistics table prints it: `950`, `2.2k`,
/// `98k`, `1.9M`.
pub fn humanize(n: u64) -> String {
    fn one_decimal(v: f64, unit: &str) -> String {
        let s = format!("{v:.1}");
        format!("{}{unit}", s.strip_suffix(".0").unwrap_or(&s))
    }
    if n < 1_000 {
        return n.to_string();
    }
    let k = n as f64 / 1e3;
    if k < 9.95 {
        return one_decimal(k, "k");
    }
    if k.round() < 1_000.0 {
        return format!("{}k", k.round() as u64);
    }
    one_decimal(n as f64 / 1e6, "M")
}
