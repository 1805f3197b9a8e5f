//! Rule-based QA generation from ontology labels.
//!
//! For every music leaf on a clip the generator picks the leaf's parent
//! category (the nearest ancestor that has templates), then emits
//! open-ended, binary and multiple-choice items from seeded template
//! choices. Distractors and negative binary labels come from the leaves of
//! the same category, weighted by corpus frequency, widening to the whole
//! music subtree when the category is too small.

pub mod distractor;
pub mod seed;
pub mod template;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClipRecord, LabelFrequencyTable};
use crate::ontology::{LabelId, Ontology, OntologyError, OntologyNode};
use crate::qa::{render_options, short_id, Method, QaFormat, QaItem, Source, NO, YES};

pub use distractor::{sample_distractors, Candidate, DistractorPool};
pub use seed::{clip_rng_seed, ItemKey};
pub use template::{load_templates, select_template, QuestionTemplate, WILDCARD_CATEGORY};

use seed::{rng_from_seed, substream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("no {format} template for category {category:?}")]
    NoTemplate { format: QaFormat, category: String },
    #[error("placeholder error: {0}")]
    Placeholder(String),
    #[error("distractor pool has {available} drawable labels, {needed} needed")]
    InsufficientPool { needed: usize, available: usize },
    #[error("no drawable negative label")]
    EmptyPool,
    #[error("label {0} has no parent category")]
    NoCategory(LabelId),
    #[error("template {template_id} is {actual}, expected {expected}")]
    WrongFormat {
        template_id: String,
        expected: QaFormat,
        actual: QaFormat,
    },
    #[error("template file: {0}")]
    TemplateFile(String),
    #[error("{0}")]
    Ontology(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl From<OntologyError> for GenError {
    fn from(e: OntologyError) -> Self {
        GenError::Ontology(e.to_string())
    }
}

/// Items requested per (leaf, format).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    #[serde(default)]
    pub open: u32,
    #[serde(default)]
    pub binary: u32,
    #[serde(default)]
    pub mcq: u32,
}

impl Default for GenerationPlan {
    fn default() -> Self {
        GenerationPlan {
            open: 1,
            binary: 1,
            mcq: 1,
        }
    }
}

impl GenerationPlan {
    pub fn count(&self, format: QaFormat) -> u32 {
        match format {
            QaFormat::OpenEnded => self.open,
            QaFormat::Binary => self.binary,
            QaFormat::MultipleChoice => self.mcq,
            QaFormat::Caption => 0,
        }
    }

    /// Zero every format not in `keep`.
    pub fn restricted_to(&self, keep: &BTreeSet<QaFormat>) -> Self {
        let pick = |f: QaFormat, n: u32| if keep.contains(&f) { n } else { 0 };
        GenerationPlan {
            open: pick(QaFormat::OpenEnded, self.open),
            binary: pick(QaFormat::Binary, self.binary),
            mcq: pick(QaFormat::MultipleChoice, self.mcq),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub global_seed: u64,
    #[serde(default)]
    pub plan: GenerationPlan,
    /// Per-source overrides of `plan`.
    #[serde(default)]
    pub source_plans: BTreeMap<Source, GenerationPlan>,
    #[serde(default = "default_mcq_options")]
    pub mcq_options: usize,
    /// Emit only these formats. Item counters still advance over the full
    /// plan, so the output is a subset of the unfiltered run.
    #[serde(default)]
    pub keep_formats: Option<BTreeSet<QaFormat>>,
}

fn default_mcq_options() -> usize {
    4
}

impl RuleConfig {
    pub fn new(global_seed: u64) -> Self {
        RuleConfig {
            global_seed,
            plan: GenerationPlan::default(),
            source_plans: BTreeMap::new(),
            mcq_options: default_mcq_options(),
            keep_formats: None,
        }
    }

    pub fn plan_for(&self, source: Source) -> GenerationPlan {
        self.source_plans.get(&source).copied().unwrap_or(self.plan)
    }
}

/// The category a leaf's questions are phrased in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub node: LabelId,
    /// Lower-cased display name, used in question text and `QaItem::category`.
    pub name: String,
    /// Template lookup key: `name`, or the wildcard.
    pub template_key: String,
}

/// Per-item failure, collected instead of aborting the batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub audio_id: String,
    pub leaf: String,
    pub format: QaFormat,
    pub item_counter: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub clips: u64,
    pub clips_without_leaves: u64,
    pub items: BTreeMap<QaFormat, u64>,
    /// MCQs whose category pool was too small and drew from the whole music subtree.
    pub widened_pools: u64,
    /// Negative binary questions turned positive because no negative label existed.
    pub binary_fallbacks: u64,
    pub errors: Vec<ItemError>,
}

impl GenerationReport {
    pub fn total_items(&self) -> u64 {
        self.items.values().sum()
    }

    fn absorb(&mut self, other: GenerationReport) {
        self.clips += other.clips;
        self.clips_without_leaves += other.clips_without_leaves;
        for (f, n) in other.items {
            *self.items.entry(f).or_insert(0) += n;
        }
        self.widened_pools += other.widened_pools;
        self.binary_fallbacks += other.binary_fallbacks;
        self.errors.extend(other.errors);
    }
}

fn check_format(t: &QuestionTemplate, expected: QaFormat) -> Result<(), GenError> {
    if t.format != expected {
        return Err(GenError::WrongFormat {
            template_id: t.template_id.clone(),
            expected,
            actual: t.format,
        });
    }
    Ok(())
}

fn rule_qa_id(clip: &ClipRecord, format: QaFormat, template_id: &str, key: ItemKey) -> String {
    short_id(&[
        b"rule",
        clip.source.as_str().as_bytes(),
        clip.audio_id.as_bytes(),
        format.as_str().as_bytes(),
        template_id.as_bytes(),
        &key.item_counter.to_le_bytes(),
        &key.global_seed.to_le_bytes(),
    ])
}

fn base_item(clip: &ClipRecord, format: QaFormat, category: &OntologyNode, t: &QuestionTemplate, key: ItemKey) -> QaItem {
    QaItem {
        qa_id: rule_qa_id(clip, format, &t.template_id, key),
        audio_id: clip.audio_id.clone(),
        source: clip.source,
        format,
        question: String::new(),
        options: Vec::new(),
        answer: String::new(),
        answer_index: None,
        category: category.name.to_lowercase(),
        method: Method::Rule,
        template_id: Some(t.template_id.clone()),
        seed: key.seed(&clip.audio_id),
    }
}

/// Open-ended item: "What is the {category} in this music?" answered by the leaf name.
pub fn generate_open_qa(
    clip: &ClipRecord,
    leaf: &OntologyNode,
    category: &OntologyNode,
    t: &QuestionTemplate,
    key: ItemKey,
) -> Result<QaItem, GenError> {
    check_format(t, QaFormat::OpenEnded)?;
    if !t.placeholders().contains("category") {
        return Err(GenError::Placeholder(format!("template {} lacks {{category}}", t.template_id)));
    }
    let mut item = base_item(clip, QaFormat::OpenEnded, category, t, key);
    item.question = template::render(&t.text, Some(&category.name.to_lowercase()), None)?;
    item.answer = leaf.name.clone();
    Ok(item)
}

/// Binary item plus whether the negative branch had to fall back to a positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOutcome {
    pub item: QaItem,
    pub fell_back: bool,
}

/// Yes/no item: with probability 1/2 asks about the leaf itself ("Yes"),
/// otherwise about a label drawn from `pool` by weight ("No").
pub fn generate_binary_qa(
    clip: &ClipRecord,
    leaf: &OntologyNode,
    category: &OntologyNode,
    pool: &DistractorPool,
    t: &QuestionTemplate,
    key: ItemKey,
) -> Result<BinaryOutcome, GenError> {
    check_format(t, QaFormat::Binary)?;
    let mut item = base_item(clip, QaFormat::Binary, category, t, key);
    let mut rng = rng_from_seed(item.seed);
    let positive = rng.random_bool(0.5);
    let mut fell_back = false;
    let asked = if positive {
        leaf.name.clone()
    } else {
        match distractor::sample_with(pool, 1, &mut rng) {
            Ok(mut names) => names.remove(0),
            Err(_) => {
                log::debug!("{}: {}; asking about the positive label", clip.audio_id, GenError::EmptyPool);
                fell_back = true;
                leaf.name.clone()
            }
        }
    };
    item.question = template::render(
        &t.text,
        Some(&category.name.to_lowercase()),
        Some(&asked.to_lowercase()),
    )?;
    item.answer = if positive || fell_back { YES } else { NO }.to_string();
    Ok(BinaryOutcome { item, fell_back })
}

/// Multiple-choice item: the leaf plus `k_options - 1` weighted distractors
/// in seeded random order, rendered as `stem A. x B. y ...`.
pub fn generate_mcq(
    clip: &ClipRecord,
    leaf: &OntologyNode,
    category: &OntologyNode,
    pool: &DistractorPool,
    t: &QuestionTemplate,
    k_options: usize,
    key: ItemKey,
) -> Result<QaItem, GenError> {
    check_format(t, QaFormat::MultipleChoice)?;
    if !(2..=26).contains(&k_options) {
        return Err(GenError::InsufficientPool {
            needed: k_options.saturating_sub(1),
            available: pool.drawable(),
        });
    }
    let mut item = base_item(clip, QaFormat::MultipleChoice, category, t, key);
    let mut rng = rng_from_seed(item.seed);
    let mut options = distractor::sample_with(pool, k_options - 1, &mut rng)?;
    options.push(leaf.name.clone());
    options.shuffle(&mut rng);
    let answer_index = options
        .iter()
        .position(|o| *o == leaf.name)
        .expect("answer was inserted");
    let stem = template::render(&t.text, Some(&category.name.to_lowercase()), None)?;
    item.question = format!("{stem} {}", render_options(&options));
    item.answer = leaf.name.clone();
    item.answer_index = Some(answer_index);
    item.options = options;
    Ok(item)
}

/// Output of one clip.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipGeneration {
    pub items: Vec<QaItem>,
    pub report: GenerationReport,
}

/// Precomputed generation context: categories, pools and templates.
pub struct RuleGenerator<'a> {
    ontology: &'a Ontology,
    music_leaves: BTreeSet<LabelId>,
    templates: Vec<QuestionTemplate>,
    config: RuleConfig,
    categories: HashMap<LabelId, Result<Category, GenError>>,
    category_pools: HashMap<LabelId, Vec<Candidate>>,
    global_pool: Vec<Candidate>,
}

impl<'a> RuleGenerator<'a> {
    pub fn new(
        ontology: &'a Ontology,
        music_root: &LabelId,
        freqs: &LabelFrequencyTable,
        templates: Vec<QuestionTemplate>,
        config: RuleConfig,
    ) -> Result<Self, GenError> {
        let music_leaves = ontology.leaf_labels(music_root)?;
        let template_keys: BTreeSet<&str> = templates.iter().map(|t| t.category.as_str()).collect();
        let has_wildcard = template_keys.contains(WILDCARD_CATEGORY);

        let candidate = |id: &LabelId| Candidate {
            id: id.clone(),
            name: ontology.get(id).expect("leaf exists").name.clone(),
            weight: freqs.get(id) as f64,
        };

        let mut categories = HashMap::new();
        let mut category_pools: HashMap<LabelId, Vec<Candidate>> = HashMap::new();
        for leaf in &music_leaves {
            let ancestors = ontology.ancestors(leaf);
            let resolved = ancestors
                .iter()
                .map(|a| (a, ontology.get(a).expect("ancestor exists").name.to_lowercase()))
                .find(|(_, name)| template_keys.contains(name.as_str()))
                .map(|(a, name)| Category {
                    node: a.clone(),
                    template_key: name.clone(),
                    name,
                })
                .or_else(|| {
                    let nearest = ancestors.first()?;
                    has_wildcard.then(|| Category {
                        node: nearest.clone(),
                        name: ontology.get(nearest).expect("ancestor exists").name.to_lowercase(),
                        template_key: WILDCARD_CATEGORY.to_string(),
                    })
                })
                .ok_or_else(|| match ancestors.is_empty() {
                    true => GenError::NoCategory(leaf.clone()),
                    false => GenError::NoTemplate {
                        format: QaFormat::OpenEnded,
                        category: ontology.get(&ancestors[0]).expect("ancestor exists").name.to_lowercase(),
                    },
                });
            if let Ok(cat) = &resolved {
                if !category_pools.contains_key(&cat.node) {
                    let pool = ontology
                        .leaf_labels(&cat.node)?
                        .iter()
                        .filter(|l| music_leaves.contains(*l))
                        .map(candidate)
                        .collect();
                    category_pools.insert(cat.node.clone(), pool);
                }
            }
            categories.insert(leaf.clone(), resolved);
        }
        let global_pool = music_leaves.iter().map(candidate).collect();
        Ok(RuleGenerator {
            ontology,
            music_leaves,
            templates,
            config,
            categories,
            category_pools,
            global_pool,
        })
    }

    pub fn config(&self) -> &RuleConfig {
        &self.config
    }

    pub fn music_leaves(&self) -> &BTreeSet<LabelId> {
        &self.music_leaves
    }

    pub fn category_of(&self, leaf: &LabelId) -> Option<&Result<Category, GenError>> {
        self.categories.get(leaf)
    }

    /// Candidates minus anything on the clip or sharing a name with a clip label.
    fn pool_for(&self, candidates: &[Candidate], clip: &ClipRecord, excluded_names: &BTreeSet<String>) -> DistractorPool {
        DistractorPool::new(
            candidates
                .iter()
                .filter(|c| !clip.labels.contains(&c.id) && !excluded_names.contains(&c.name.to_lowercase()))
                .cloned()
                .collect(),
        )
    }

    /// Generate every planned item for one clip. Item counters run over
    /// leaves in id order, then formats (open, binary, mcq), then repeats.
    pub fn generate_for_clip(&self, clip: &ClipRecord) -> ClipGeneration {
        let mut out = ClipGeneration::default();
        out.report.clips = 1;
        let plan = self.config.plan_for(clip.source);
        let leaves: Vec<&LabelId> = clip.labels.iter().filter(|l| self.music_leaves.contains(*l)).collect();
        if leaves.is_empty() {
            out.report.clips_without_leaves = 1;
            return out;
        }
        let excluded_names: BTreeSet<String> = clip
            .labels
            .iter()
            .filter_map(|l| self.ontology.get(l))
            .map(|n| n.name.to_lowercase())
            .collect();
        let k = self.config.mcq_options;
        let mut counter = 0u64;
        for leaf_id in leaves {
            let leaf = self.ontology.get(leaf_id).expect("music leaf exists");
            for format in [QaFormat::OpenEnded, QaFormat::Binary, QaFormat::MultipleChoice] {
                for _ in 0..plan.count(format) {
                    let key = ItemKey::new(self.config.global_seed, counter);
                    counter += 1;
                    if self.config.keep_formats.as_ref().is_some_and(|k| !k.contains(&format)) {
                        continue;
                    }
                    let result = self.generate_one(clip, leaf, format, k, key, &excluded_names, &mut out.report);
                    match result {
                        Ok(item) => {
                            *out.report.items.entry(format).or_insert(0) += 1;
                            out.items.push(item);
                        }
                        Err(e) => out.report.errors.push(ItemError {
                            audio_id: clip.audio_id.clone(),
                            leaf: leaf_id.to_string(),
                            format,
                            item_counter: key.item_counter,
                            message: e.to_string(),
                        }),
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn generate_one(
        &self,
        clip: &ClipRecord,
        leaf: &OntologyNode,
        format: QaFormat,
        k: usize,
        key: ItemKey,
        excluded_names: &BTreeSet<String>,
        report: &mut GenerationReport,
    ) -> Result<QaItem, GenError> {
        let category = self.categories[&leaf.id].as_ref().map_err(Clone::clone)?;
        let category_node = self.ontology.get(&category.node).expect("category exists");
        let seed = key.seed(&clip.audio_id);
        let t = select_template(&self.templates, format, &category.template_key, substream(seed, "template"))?;
        match format {
            QaFormat::OpenEnded => generate_open_qa(clip, leaf, category_node, t, key),
            QaFormat::Binary => {
                let mut pool = self.pool_for(&self.category_pools[&category.node], clip, excluded_names);
                if pool.is_empty() {
                    pool = self.pool_for(&self.global_pool, clip, excluded_names);
                }
                let outcome = generate_binary_qa(clip, leaf, category_node, &pool, t, key)?;
                if outcome.fell_back {
                    report.binary_fallbacks += 1;
                }
                Ok(outcome.item)
            }
            QaFormat::MultipleChoice => {
                let mut pool = self.pool_for(&self.category_pools[&category.node], clip, excluded_names);
                if pool.drawable() < k.saturating_sub(1) {
                    pool = self.pool_for(&self.global_pool, clip, excluded_names);
                    report.widened_pools += 1;
                }
                generate_mcq(clip, leaf, category_node, &pool, t, k, key)
            }
            QaFormat::Caption => unreachable!("captions are never templated"),
        }
    }

    /// Generate over a corpus on `workers` threads. The result is sorted by
    /// `qa_id` and does not depend on `workers`.
    pub fn generate_corpus(&self, clips: &[ClipRecord], workers: usize) -> Result<(Vec<QaItem>, GenerationReport), GenError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| GenError::Pool(e.to_string()))?;
        let per_clip: Vec<ClipGeneration> = pool.install(|| clips.par_iter().map(|c| self.generate_for_clip(c)).collect());
        let mut items = Vec::with_capacity(per_clip.iter().map(|c| c.items.len()).sum());
        let mut report = GenerationReport::default();
        for clip in per_clip {
            items.extend(clip.items);
            report.absorb(clip.report);
        }
        pool.install(|| items.par_sort_unstable_by(|a, b| a.qa_id.cmp(&b.qa_id)));
        Ok((items, report))
    }
}

/// One-shot form of [`RuleGenerator::generate_for_clip`].
pub fn generate_for_clip(
    clip: &ClipRecord,
    ontology: &Ontology,
    music_root: &LabelId,
    freqs: &LabelFrequencyTable,
    templates: &[QuestionTemplate],
    config: &RuleConfig,
) -> Result<ClipGeneration, GenError> {
    let generator = RuleGenerator::new(ontology, music_root, freqs, templates.to_vec(), config.clone())?;
    Ok(generator.generate_for_clip(clip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_leaves;

    const ONTOLOGY: &[u8] = br#"[
        {"id": "/m/music", "name": "Music", "child_ids": ["/m/inst", "/m/genre"]},
        {"id": "/m/inst", "name": "Musical instrument", "child_ids": ["/m/ag", "/m/violin", "/m/uke", "/m/cello", "/m/drums"]},
        {"id": "/m/ag", "name": "Acoustic guitar", "child_ids": []},
        {"id": "/m/violin", "name": "Violin", "child_ids": []},
        {"id": "/m/uke", "name": "Ukulele", "child_ids": []},
        {"id": "/m/cello", "name": "Cello", "child_ids": []},
        {"id": "/m/drums", "name": "Drums", "child_ids": []},
        {"id": "/m/genre", "name": "Music genre", "child_ids": ["/m/reggae", "/m/jazz"]},
        {"id": "/m/reggae", "name": "Reggae", "child_ids": []},
        {"id": "/m/jazz", "name": "Jazz", "child_ids": []}
    ]"#;

    fn templates() -> Vec<QuestionTemplate> {
        load_templates(
            br#"[
            {"template_id": "open-inst-1", "format": "open", "category": "musical instrument", "text": "What is the {category} in this music?"},
            {"template_id": "bin-inst-1", "format": "binary", "category": "musical instrument", "text": "Is {label} present in the music?"},
            {"template_id": "mcq-inst-1", "format": "mcq", "category": "musical instrument", "text": "Which {category} can be heard in this music?"},
            {"template_id": "open-genre-1", "format": "open", "category": "music genre", "text": "What is the {category} of this music?"},
            {"template_id": "bin-genre-1", "format": "binary", "category": "music genre", "text": "Is this music {label}?"},
            {"template_id": "mcq-genre-1", "format": "mcq", "category": "music genre", "text": "Which {category} fits this music?"}
        ]"#,
        )
        .unwrap()
    }

    fn clip(id: &str, labels: &[&str]) -> ClipRecord {
        ClipRecord {
            audio_id: id.into(),
            source: Source::AudioSet,
            labels: labels.iter().map(|l| LabelId::from(*l)).collect(),
            caption: None,
            metadata: BTreeMap::new(),
            duration_s: None,
        }
    }

    fn setup() -> (Ontology, LabelFrequencyTable) {
        let o = Ontology::parse(ONTOLOGY).unwrap();
        let leaves = o.leaf_labels(&"/m/music".into()).unwrap();
        let corpus: Vec<ClipRecord> = leaves
            .iter()
            .enumerate()
            .map(|(i, l)| clip(&format!("c{i}"), &[l.as_str()]))
            .collect();
        let freqs = count_leaves(&corpus, &leaves);
        (o, freqs)
    }

    fn node<'a>(o: &'a Ontology, id: &str) -> &'a OntologyNode {
        o.get(&id.into()).unwrap()
    }

    #[test]
    fn open_question_fills_category_slot() {
        let (o, _) = setup();
        let t = &templates()[0];
        let c = clip("x", &["/m/ag"]);
        let key = ItemKey::new(1, 0);
        let item = generate_open_qa(&c, node(&o, "/m/ag"), node(&o, "/m/inst"), t, key).unwrap();
        assert_eq!(item.question, "What is the musical instrument in this music?");
        assert_eq!(item.answer, "Acoustic guitar");
        assert_eq!(item.category, "musical instrument");
        assert_eq!(item.method, Method::Rule);
        let again = generate_open_qa(&c, node(&o, "/m/ag"), node(&o, "/m/inst"), t, key).unwrap();
        assert_eq!(item, again);
    }

    #[test]
    fn open_question_needs_category_placeholder() {
        let (o, _) = setup();
        let t = QuestionTemplate {
            template_id: "bad".into(),
            format: QaFormat::OpenEnded,
            category: "musical instrument".into(),
            text: "What is playing?".into(),
        };
        let err = generate_open_qa(&clip("x", &["/m/ag"]), node(&o, "/m/ag"), node(&o, "/m/inst"), &t, ItemKey::new(1, 0));
        assert!(matches!(err, Err(GenError::Placeholder(_))));
    }

    #[test]
    fn binary_positive_and_forced_negative() {
        let (o, _) = setup();
        let t = &templates()[1];
        let c = clip("x", &["/m/ag"]);
        let violin_only = DistractorPool::new(vec![Candidate {
            id: "/m/violin".into(),
            name: "Violin".into(),
            weight: 3.0,
        }]);
        let mut saw = BTreeSet::new();
        for counter in 0..64 {
            let out = generate_binary_qa(&c, node(&o, "/m/ag"), node(&o, "/m/inst"), &violin_only, t, ItemKey::new(5, counter)).unwrap();
            let item = out.item;
            match item.answer.as_str() {
                "Yes" => assert_eq!(item.question, "Is acoustic guitar present in the music?"),
                "No" => assert_eq!(item.question, "Is violin present in the music?"),
                other => panic!("answer {other}"),
            }
            saw.insert(item.answer);
        }
        assert_eq!(saw.len(), 2);
    }

    #[test]
    fn binary_empty_pool_falls_back_to_positive() {
        let (o, _) = setup();
        let t = &templates()[1];
        let c = clip("x", &["/m/ag"]);
        let empty = DistractorPool::default();
        let mut fallbacks = 0;
        for counter in 0..64 {
            let out = generate_binary_qa(&c, node(&o, "/m/ag"), node(&o, "/m/inst"), &empty, t, ItemKey::new(5, counter)).unwrap();
            assert_eq!(out.item.answer, "Yes");
            fallbacks += out.fell_back as u32;
        }
        assert!(fallbacks > 0);
    }

    #[test]
    fn mcq_has_four_lettered_options() {
        let (o, freqs) = setup();
        let gen = RuleGenerator::new(&o, &"/m/music".into(), &freqs, templates(), RuleConfig::new(3)).unwrap();
        let c = clip("x", &["/m/ag"]);
        let pool = gen.pool_for(&gen.category_pools[&LabelId::from("/m/inst")], &c, &BTreeSet::new());
        let t = QuestionTemplate {
            template_id: "select-mcq".into(),
            format: QaFormat::MultipleChoice,
            category: "musical instrument".into(),
            text: "Select the {category} in this music:".into(),
        };
        let item = generate_mcq(&c, node(&o, "/m/ag"), node(&o, "/m/inst"), &pool, &t, 4, ItemKey::new(3, 2)).unwrap();
        assert_eq!(item.options.len(), 4);
        assert_eq!(item.options.iter().filter(|o| *o == "Acoustic guitar").count(), 1);
        assert_eq!(item.options[item.answer_index.unwrap()], item.answer);
        assert!(item.question.starts_with("Select the musical instrument in this music: A. "));
        assert!(item.question.ends_with(&format!("D. {}", item.options[3])));
    }

    #[test]
    fn one_leaf_full_plan_gives_three_items() {
        let (o, freqs) = setup();
        let gen = RuleGenerator::new(&o, &"/m/music".into(), &freqs, templates(), RuleConfig::new(9)).unwrap();
        let out = gen.generate_for_clip(&clip("x", &["/m/ag"]));
        assert_eq!(out.items.len(), 3);
        assert!(out.report.errors.is_empty());
        let formats: Vec<QaFormat> = out.items.iter().map(|i| i.format).collect();
        assert_eq!(formats, vec![QaFormat::OpenEnded, QaFormat::Binary, QaFormat::MultipleChoice]);
    }

    #[test]
    fn clip_without_music_leaves_yields_nothing() {
        let (o, freqs) = setup();
        let gen = RuleGenerator::new(&o, &"/m/music".into(), &freqs, templates(), RuleConfig::new(9)).unwrap();
        let out = gen.generate_for_clip(&clip("x", &["/m/music", "/m/inst"]));
        assert!(out.items.is_empty());
        assert_eq!(out.report.clips_without_leaves, 1);
    }

    #[test]
    fn small_category_widens_to_music_subtree() {
        // The genre category has two leaves: one on the clip, one left, but
        // an MCQ needs three distractors.
        let (o, freqs) = setup();
        let gen = RuleGenerator::new(&o, &"/m/music".into(), &freqs, templates(), RuleConfig::new(9)).unwrap();
        let out = gen.generate_for_clip(&clip("x", &["/m/reggae"]));
        assert_eq!(out.report.widened_pools, 1);
        let mcq = out.items.iter().find(|i| i.format == QaFormat::MultipleChoice).unwrap();
        assert_eq!(mcq.options.len(), 4);
        assert!(!mcq.options[..].iter().any(|o| o == "Music genre"));
    }

    #[test]
    fn missing_templates_are_reported_not_fatal() {
        let (o, freqs) = setup();
        let only_open: Vec<QuestionTemplate> = templates().into_iter().filter(|t| t.format == QaFormat::OpenEnded).collect();
        let gen = RuleGenerator::new(&o, &"/m/music".into(), &freqs, only_open, RuleConfig::new(9)).unwrap();
        let out = gen.generate_for_clip(&clip("x", &["/m/ag"]));
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.report.errors.len(), 2);
    }

    #[test]
    fn wildcard_templates_cover_uncategorised_leaves() {
        let (o, freqs) = setup();
        let ts = load_templates(
            br#"[{"template_id": "any-open", "format": "open", "category": "*", "text": "Name the {category} you hear?"}]"#,
        )
        .unwrap();
        let gen = RuleGenerator::new(&o, &"/m/music".into(), &freqs, ts, RuleConfig::new(1)).unwrap();
        let out = gen.generate_for_clip(&clip("x", &["/m/jazz"]));
        let open = &out.items[0];
        assert_eq!(open.question, "Name the music genre you hear?");
        assert_eq!(open.category, "music genre");
    }
}
