//! Pipeline configuration file (JSON). Relative paths resolve against the
//! config file's directory. Credentials never live here: endpoints name the
//! environment variable that holds their key.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::SplitRatios;
use crate::eval::EmbedderConfig;
use crate::llmgen::{EndpointConfig, RequestSlot};
use crate::qa::{QaFormat, Source};
use crate::rulegen::GenerationPlan;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ontology: Option<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub templates: Option<PathBuf>,
    pub fewshot: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// External caption / QA collections merged at assembly.
    pub imports: Vec<ImportSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportSpec {
    pub path: PathBuf,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Ontology node whose leaves count as music labels.
    pub music_root: String,
    pub global_seed: Option<u64>,
    pub workers: Option<usize>,
    pub plan: GenerationPlan,
    pub source_plans: BTreeMap<Source, GenerationPlan>,
    pub mcq_options: usize,
    pub split: SplitRatios,
    pub shard_size: usize,
    pub llm: EndpointConfig,
    /// Per-clip request; empty means one item per (named dimension, format).
    pub llm_request: Vec<RequestSlot>,
    pub embedder: EmbedderConfig,
    pub format_filter: Vec<QaFormat>,
    pub source_filter: Vec<Source>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            music_root: "/m/04rlf".into(),
            global_seed: None,
            workers: None,
            plan: GenerationPlan::default(),
            source_plans: BTreeMap::new(),
            mcq_options: 4,
            split: SplitRatios::default(),
            shard_size: 100_000,
            llm: EndpointConfig::default(),
            llm_request: Vec::new(),
            embedder: EmbedderConfig::default(),
            format_filter: Vec::new(),
            source_filter: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_slice(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for opt in [&mut p.ontology, &mut p.templates, &mut p.fewshot, &mut p.out_dir, &mut p.cache_dir] {
            if let Some(x) = opt.as_mut() {
                resolve(base, x);
            }
        }
        for m in &mut p.manifests {
            resolve(base, m);
        }
        for i in &mut p.imports {
            resolve(base, &mut i.path);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.mcq_options < 2 || self.mcq_options > 26 {
            return Err(ConfigError::Invalid(format!("mcq_options must be in 2..=26, got {}", self.mcq_options)));
        }
        if self.shard_size == 0 {
            return Err(ConfigError::Invalid("shard_size must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        self.split.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn format_keep(&self) -> Option<BTreeSet<QaFormat>> {
        (!self.format_filter.is_empty()).then(|| self.format_filter.iter().copied().collect())
    }

    pub fn source_keep(&self) -> Option<BTreeSet<Source>> {
        (!self.source_filter.is_empty()).then(|| self.source_filter.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"paths": {"ontology": "o.json", "manifests": ["m.jsonl"]}, "global_seed": 7}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.ontology.unwrap(), dir.path().join("o.json"));
        assert_eq!(cfg.paths.manifests[0], dir.path().join("m.jsonl"));
        assert_eq!(cfg.global_seed, Some(7));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"api_key": "sk-nope"}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(ConfigError::Parse { .. })));
        std::fs::write(&path, r#"{"split": {"train": 0.5, "val": 0.1, "test": 0.1}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(ConfigError::Invalid(_))));
    }
}
