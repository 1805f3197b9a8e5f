//! Synthetic ontologies, corpora and item sets shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use musicskills::qa::{Method, QaFormat, QaItem, Source};
use musicskills::rulegen::{load_templates, QuestionTemplate};
use musicskills::{ClipRecord, LabelId, Ontology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const MUSIC_ROOT: &str = "/m/music";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn shipped_templates() -> Vec<QuestionTemplate> {
    load_templates(include_bytes!("../../data/templates-v1.json")).unwrap()
}

/// Music root with instrument families, genres and moods, plus a non-music
/// branch. Leaf names are unique.
pub struct SyntheticOntology {
    pub ontology: Ontology,
    pub music_leaves: Vec<LabelId>,
    pub non_music_leaves: Vec<LabelId>,
    /// Internal music nodes, usable as parent-only labels.
    pub music_parents: Vec<LabelId>,
}

pub fn synthetic_ontology(families: usize, per_family: usize, genres: usize, moods: usize) -> SyntheticOntology {
    let mut nodes = Vec::new();
    let mut music_leaves = Vec::new();
    let mut music_parents = vec![
        LabelId::from("/m/inst"),
        LabelId::from("/m/genre"),
        LabelId::from("/m/mood"),
    ];
    let family_ids: Vec<String> = (0..families).map(|f| format!("/m/fam{f}")).collect();
    nodes.push(json!({"id": MUSIC_ROOT, "name": "Music", "child_ids": ["/m/inst", "/m/genre", "/m/mood"]}));
    nodes.push(json!({"id": "/m/inst", "name": "Musical instrument", "child_ids": family_ids}));
    for (f, fid) in family_ids.iter().enumerate() {
        let kids: Vec<String> = (0..per_family).map(|i| format!("/m/i{f}_{i}")).collect();
        nodes.push(json!({"id": fid, "name": format!("Family {f}"), "child_ids": kids}));
        music_parents.push(LabelId::from(fid.as_str()));
        for (i, k) in kids.iter().enumerate() {
            nodes.push(json!({"id": k, "name": format!("Instrument {f}-{i}"), "child_ids": []}));
            music_leaves.push(LabelId::from(k.as_str()));
        }
    }
    let genre_ids: Vec<String> = (0..genres).map(|g| format!("/m/g{g}")).collect();
    nodes.push(json!({"id": "/m/genre", "name": "Music genre", "child_ids": genre_ids}));
    for (g, gid) in genre_ids.iter().enumerate() {
        nodes.push(json!({"id": gid, "name": format!("Genre {g}"), "child_ids": []}));
        music_leaves.push(LabelId::from(gid.as_str()));
    }
    let mood_ids: Vec<String> = (0..moods).map(|m| format!("/m/md{m}")).collect();
    nodes.push(json!({"id": "/m/mood", "name": "Music mood", "child_ids": mood_ids}));
    for (m, mid) in mood_ids.iter().enumerate() {
        nodes.push(json!({"id": mid, "name": format!("Mood {m}"), "child_ids": []}));
        music_leaves.push(LabelId::from(mid.as_str()));
    }
    nodes.push(json!({"id": "/m/speech", "name": "Speech", "child_ids": ["/m/male", "/m/female"]}));
    nodes.push(json!({"id": "/m/male", "name": "Male speech", "child_ids": []}));
    nodes.push(json!({"id": "/m/female", "name": "Female speech", "child_ids": []}));
    let raw = serde_json::to_vec(&nodes).unwrap();
    SyntheticOntology {
        ontology: Ontology::parse(&raw).unwrap(),
        music_leaves,
        non_music_leaves: vec![LabelId::from("/m/male"), LabelId::from("/m/female")],
        music_parents,
    }
}

pub fn default_synthetic_ontology() -> SyntheticOntology {
    synthetic_ontology(4, 6, 10, 6)
}

const SOURCES: [Source; 4] = [Source::MusicCaps, Source::MagnaTagATune, Source::Fma, Source::AudioSet];

/// Clips with one to three music leaves drawn with skewed weights, sometimes
/// a non-music label too.
pub fn synthetic_clips(onto: &SyntheticOntology, n: usize, seed: u64) -> Vec<ClipRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = &onto.music_leaves;
    (0..n)
        .map(|i| {
            let mut labels = BTreeSet::new();
            let k = rng.random_range(1..=3);
            while labels.len() < k {
                // Squaring a uniform index favours early leaves.
                let u: f64 = rng.random();
                labels.insert(leaves[((u * u) * leaves.len() as f64) as usize].clone());
            }
            if rng.random_bool(0.2) {
                labels.insert(onto.non_music_leaves[rng.random_range(0..2)].clone());
            }
            ClipRecord {
                audio_id: format!("clip-{seed}-{i:06}"),
                source: SOURCES[i % SOURCES.len()],
                labels,
                caption: None,
                metadata: Default::default(),
                duration_s: Some(10.0),
            }
        })
        .collect()
}

pub fn item(qa_id: &str, audio_id: &str, source: Source, format: QaFormat, question: &str) -> QaItem {
    let (options, answer, answer_index) = match format {
        QaFormat::MultipleChoice => (
            vec!["Piano".to_string(), "Violin".into(), "Flute".into(), "Harp".into()],
            "Violin".to_string(),
            Some(1),
        ),
        QaFormat::Binary => (vec![], "Yes".to_string(), None),
        _ => (vec![], "An answer.".to_string(), None),
    };
    QaItem {
        qa_id: qa_id.into(),
        audio_id: audio_id.into(),
        source,
        format,
        question: question.into(),
        options,
        answer,
        answer_index,
        category: "musical instrument".into(),
        method: if format == QaFormat::Caption { Method::Imported } else { Method::Rule },
        template_id: None,
        seed: 0,
    }
}

/// Random items over all sources and formats.
pub fn random_items(n: usize, audios: usize, seed: u64) -> Vec<QaItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let formats = [QaFormat::OpenEnded, QaFormat::Binary, QaFormat::MultipleChoice, QaFormat::Caption];
    let sources = [Source::MusicCaps, Source::MagnaTagATune, Source::Fma, Source::AudioSet, Source::Other];
    (0..n)
        .map(|i| {
            let a = rng.random_range(0..audios);
            let f = formats[rng.random_range(0..4)];
            let s = sources[a % sources.len()];
            item(&format!("{seed:x}-{i:08}"), &format!("aud-{a:06}"), s, f, &format!("Question {i}?"))
        })
        .collect()
}
