//! Scoring model outputs: MCQ and yes/no accuracy, similarity-based label
//! classification and exact-match METEOR for captions.

mod extract;
mod meteor;
mod similarity;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_mcq_answer, extract_mcq_answer_with, extract_yes_no, ExtractionRule, DEFAULT_ORDER};
pub use meteor::{align, count_chunks, meteor_exact, tokenize, MeteorBreakdown};
pub use similarity::{
    argmax_cosine, cosine, match_label_by_similarity, Embedder, EmbedderConfig, HttpEmbedder, LabelMatcher,
    TrigramEmbedder,
};

use crate::qa::{QaFormat, QaItem, NO, YES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub qa_id: String,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("output references unknown qa_id {0}")]
    UnknownQaId(String),
    #[error("more than one output for qa_id {0}")]
    DuplicateOutput(String),
    #[error("item {qa_id} has format {format}, expected {expected}")]
    WrongFormat {
        qa_id: String,
        format: QaFormat,
        expected: QaFormat,
    },
    #[error("task {0} appears in more than one fragment")]
    Overlap(String),
    #[error("embedder: {0}")]
    Embedder(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("need at least 2 candidate labels, got {0}")]
    TooFewCandidates(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parse `{"qa_id", "text"}` JSONL, skipping blank lines.
pub fn load_outputs(raw: &str) -> Result<Vec<ModelOutput>, EvalError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub total: u64,
    pub correct: u64,
    /// Accuracy, or mean score for caption tasks.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    /// `accuracy` or `meteor_exact`.
    pub metric: String,
    pub total: u64,
    pub correct: u64,
    /// Items with no output at all.
    pub missing: u64,
    /// Outputs from which no answer could be read.
    pub unparseable: u64,
    pub value: f64,
    pub per_category: BTreeMap<String, GroupScore>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<String, TaskScore>,
    /// Pooled over accuracy tasks.
    pub overall: Overall,
    /// Reserved; always null.
    pub bertscore: Option<f64>,
    /// Task value as a percentage of a baseline report's value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_to_baseline: Option<BTreeMap<String, f64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    fn single(task: &str, score: TaskScore) -> Self {
        let mut r = EvalReport::default();
        r.tasks.insert(task.to_string(), score);
        r.recompute_overall();
        r
    }

    fn recompute_overall(&mut self) {
        let (total, correct) = self
            .tasks
            .values()
            .filter(|t| t.metric == "accuracy")
            .fold((0, 0), |(t, c), s| (t + s.total, c + s.correct));
        self.overall = Overall {
            total,
            correct,
            accuracy: ratio(correct, total),
        };
    }

    /// Rename the only task in a fragment, e.g. `mcq` → `muchomusic`.
    pub fn renamed(mut self, name: &str) -> Self {
        let tasks = std::mem::take(&mut self.tasks);
        assert_eq!(tasks.len(), 1, "renamed applies to single-task fragments");
        self.tasks = tasks.into_values().map(|t| (name.to_string(), t)).collect();
        self
    }

    /// Attach percentages relative to `baseline` for tasks both reports share.
    pub fn with_baseline(mut self, baseline: &EvalReport) -> Self {
        let rel = self
            .tasks
            .iter()
            .filter_map(|(k, t)| baseline.tasks.get(k).map(|b| (k.clone(), relative_percent(t.value, b.value))))
            .collect();
        self.relative_to_baseline = Some(rel);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialize")
    }
}

/// `value` as a percentage of `baseline` (58.6 of 71.4 → 82.07…).
pub fn relative_percent(value: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * value / baseline
    }
}

pub fn aggregate_report(fragments: Vec<EvalReport>) -> Result<EvalReport, EvalError> {
    let mut out = EvalReport::default();
    for f in fragments {
        for (task, score) in f.tasks {
            if out.tasks.contains_key(&task) {
                return Err(EvalError::Overlap(task));
            }
            out.tasks.insert(task, score);
        }
    }
    out.recompute_overall();
    Ok(out)
}

/// Outputs keyed by qa_id, rejecting unknown and repeated ids.
fn index_outputs<'o>(
    items: &[QaItem],
    outputs: &'o [ModelOutput],
    expected: &[QaFormat],
) -> Result<HashMap<&'o str, &'o str>, EvalError> {
    for item in items {
        if !expected.contains(&item.format) {
            return Err(EvalError::WrongFormat {
                qa_id: item.qa_id.clone(),
                format: item.format,
                expected: expected[0],
            });
        }
    }
    let known: std::collections::HashSet<&str> = items.iter().map(|i| i.qa_id.as_str()).collect();
    let mut map = HashMap::with_capacity(outputs.len());
    for o in outputs {
        if !known.contains(o.qa_id.as_str()) {
            return Err(EvalError::UnknownQaId(o.qa_id.clone()));
        }
        if map.insert(o.qa_id.as_str(), o.text.as_str()).is_some() {
            return Err(EvalError::DuplicateOutput(o.qa_id.clone()));
        }
    }
    Ok(map)
}

#[derive(Clone, Copy)]
enum Verdict {
    Missing,
    Unparseable,
    Wrong,
    Right,
}

fn tally(
    metric: &str,
    items: &[QaItem],
    verdicts: &[(Verdict, f64)],
    category_map: Option<&BTreeMap<String, String>>,
) -> TaskScore {
    let mut score = TaskScore {
        metric: metric.to_string(),
        total: items.len() as u64,
        correct: 0,
        missing: 0,
        unparseable: 0,
        value: 0.0,
        per_category: BTreeMap::new(),
    };
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut total_sum = 0.0;
    for (item, (verdict, value)) in items.iter().zip(verdicts) {
        let group = category_map
            .and_then(|m| m.get(&item.qa_id))
            .cloned()
            .unwrap_or_else(|| item.category.clone());
        let g = score.per_category.entry(group.clone()).or_default();
        g.total += 1;
        *sums.entry(group).or_default() += value;
        total_sum += value;
        match verdict {
            Verdict::Missing => score.missing += 1,
            Verdict::Unparseable => score.unparseable += 1,
            Verdict::Wrong => {}
            Verdict::Right => {
                score.correct += 1;
                g.correct += 1;
            }
        }
    }
    for (name, g) in score.per_category.iter_mut() {
        g.value = sums[name] / g.total as f64;
    }
    score.value = if items.is_empty() { 0.0 } else { total_sum / items.len() as f64 };
    score
}

fn verdict(right: bool) -> (Verdict, f64) {
    if right {
        (Verdict::Right, 1.0)
    } else {
        (Verdict::Wrong, 0.0)
    }
}

/// Accuracy over multiple-choice items. Missing outputs and outputs with no
/// recognizable choice count as wrong. Groups come from `category_map`
/// (qa_id → group), falling back to each item's own category.
pub fn score_mcq(
    items: &[QaItem],
    outputs: &[ModelOutput],
    category_map: Option<&BTreeMap<String, String>>,
) -> Result<EvalReport, EvalError> {
    score_mcq_with(items, outputs, category_map, &DEFAULT_ORDER)
}

pub fn score_mcq_with(
    items: &[QaItem],
    outputs: &[ModelOutput],
    category_map: Option<&BTreeMap<String, String>>,
    order: &[ExtractionRule],
) -> Result<EvalReport, EvalError> {
    let by_id = index_outputs(items, outputs, &[QaFormat::MultipleChoice])?;
    let verdicts: Vec<(Verdict, f64)> = items
        .par_iter()
        .map(|item| match by_id.get(item.qa_id.as_str()) {
            None => (Verdict::Missing, 0.0),
            Some(text) => match extract_mcq_answer_with(text, &item.options, order) {
                None => (Verdict::Unparseable, 0.0),
                Some(i) => {
                    let gold = item.answer_index.or_else(|| item.options.iter().position(|o| *o == item.answer));
                    verdict(Some(i) == gold)
                }
            },
        })
        .collect();
    Ok(EvalReport::single("mcq", tally("accuracy", items, &verdicts, category_map)))
}

pub fn score_binary(items: &[QaItem], outputs: &[ModelOutput]) -> Result<EvalReport, EvalError> {
    let by_id = index_outputs(items, outputs, &[QaFormat::Binary])?;
    let verdicts: Vec<(Verdict, f64)> = items
        .par_iter()
        .map(|item| match by_id.get(item.qa_id.as_str()) {
            None => (Verdict::Missing, 0.0),
            Some(text) => match extract_yes_no(text) {
                None => (Verdict::Unparseable, 0.0),
                Some(yes) => verdict(item.answer == if yes { YES } else { NO }),
            },
        })
        .collect();
    Ok(EvalReport::single("binary", tally("accuracy", items, &verdicts, None)))
}

/// Label classification: each output is mapped to the most similar of
/// `candidates` and compared with the item's answer, case-insensitively.
pub fn score_label_classification(
    items: &[QaItem],
    outputs: &[ModelOutput],
    candidates: &[String],
    matcher: &LabelMatcher<'_>,
) -> Result<EvalReport, EvalError> {
    let by_id = index_outputs(items, outputs, &[QaFormat::OpenEnded, QaFormat::MultipleChoice])?;
    matcher.warm(candidates)?;
    let verdicts: Vec<(Verdict, f64)> = items
        .par_iter()
        .map(|item| {
            Ok(match by_id.get(item.qa_id.as_str()) {
                None => (Verdict::Missing, 0.0),
                Some(text) => {
                    let label = matcher.match_label(text, candidates)?;
                    verdict(label.trim().eq_ignore_ascii_case(item.answer.trim()))
                }
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(EvalReport::single("label", tally("accuracy", items, &verdicts, None)))
}

/// Mean exact-match METEOR (0 to 1) of outputs against caption answers.
pub fn score_captions(items: &[QaItem], outputs: &[ModelOutput]) -> Result<EvalReport, EvalError> {
    let by_id = index_outputs(items, outputs, &[QaFormat::Caption, QaFormat::OpenEnded])?;
    let verdicts: Vec<(Verdict, f64)> = items
        .par_iter()
        .map(|item| match by_id.get(item.qa_id.as_str()) {
            None => (Verdict::Missing, 0.0),
            Some(text) => (Verdict::Wrong, meteor_exact(text, &item.answer).score),
        })
        .collect();
    Ok(EvalReport::single("caption", tally("meteor_exact", items, &verdicts, None)))
}
