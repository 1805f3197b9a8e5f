//! Classifying free-form text by cosine similarity between embeddings of the
//! text and of each candidate label.

use std::collections::HashMap;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::qa::hash_u64;

pub trait Embedder: Sync {
    /// One vector per input text, all of the same dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError>;
}

/// Character-trigram counts hashed into `dim` buckets, L2-normalized.
/// Deterministic and dependency-free, for tests and offline runs.
#[derive(Debug, Clone, Copy)]
pub struct TrigramEmbedder {
    pub dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: 4096 }
    }
}

impl TrigramEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let padded: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
        for w in padded.windows(3) {
            let gram: String = w.iter().collect();
            let b = (hash_u64(&[b"trigram", gram.as_bytes()]) % self.dim as u64) as usize;
            v[b] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// Full URL of the embedding endpoint.
    pub url: String,
    pub api_key_env: String,
    pub timeout_s: u64,
    pub batch_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            url: "http://127.0.0.1:8080/embed".into(),
            api_key_env: "EMBEDDER_API_KEY".into(),
            timeout_s: 60,
            batch_size: 64,
        }
    }
}

/// Client for `POST {"texts": [...]}` → `{"embeddings": [[...], ...]}`.
pub struct HttpEmbedder {
    config: EmbedderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(config: EmbedderConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_s.max(1))))
            .build();
        HttpEmbedder {
            agent: ureq::Agent::new_with_config(agent_config),
            api_key,
            config,
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&EmbedRequest { texts })
            .map_err(|e| EvalError::Embedder(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EvalError::Embedder(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EvalError::Embedder(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>())));
        }
        let parsed: EmbedResponse = serde_json::from_str(&body).map_err(|e| EvalError::Embedder(e.to_string()))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(EvalError::Embedder(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.embeddings.len()
            )));
        }
        Ok(parsed.embeddings)
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }
}

/// Cosine similarity; zero vectors have similarity 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Index of the highest cosine; ties go to the earlier candidate.
pub fn argmax_cosine(query: &[f64], candidates: &[Vec<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = cosine(query, c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn check_dims(vectors: &[&Vec<f64>]) -> Result<usize, EvalError> {
    let dim = vectors.first().map_or(0, |v| v.len());
    if dim == 0 {
        return Err(EvalError::Embedder("empty embedding".into()));
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(EvalError::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(dim)
}

/// Label matcher that embeds each distinct label once per run.
pub struct LabelMatcher<'e> {
    embedder: &'e dyn Embedder,
    labels: RwLock<HashMap<String, Vec<f64>>>,
}

impl<'e> LabelMatcher<'e> {
    pub fn new(embedder: &'e dyn Embedder) -> Self {
        LabelMatcher {
            embedder,
            labels: RwLock::new(HashMap::new()),
        }
    }

    /// Embed any labels not yet cached, in one batch.
    pub fn warm(&self, labels: &[String]) -> Result<(), EvalError> {
        let missing: Vec<String> = {
            let cache = self.labels.read().unwrap();
            let mut m: Vec<String> = labels.iter().filter(|l| !cache.contains_key(*l)).cloned().collect();
            m.sort();
            m.dedup();
            m
        };
        if missing.is_empty() {
            return Ok(());
        }
        let vecs = self.embedder.embed(&missing)?;
        if vecs.len() != missing.len() {
            return Err(EvalError::Embedder("embedding count mismatch".into()));
        }
        let mut cache = self.labels.write().unwrap();
        for (l, v) in missing.into_iter().zip(vecs) {
            cache.insert(l, v);
        }
        Ok(())
    }

    pub fn match_index(&self, output_text: &str, candidates: &[String]) -> Result<usize, EvalError> {
        if candidates.len() < 2 {
            return Err(EvalError::TooFewCandidates(candidates.len()));
        }
        self.warm(candidates)?;
        let query = self
            .embedder
            .embed(&[output_text.to_string()])?
            .pop()
            .ok_or_else(|| EvalError::Embedder("no embedding returned".into()))?;
        let cache = self.labels.read().unwrap();
        let label_vecs: Vec<Vec<f64>> = candidates.iter().map(|c| cache[c].clone()).collect();
        let mut all: Vec<&Vec<f64>> = vec![&query];
        all.extend(label_vecs.iter());
        check_dims(&all)?;
        Ok(argmax_cosine(&query, &label_vecs).expect("at least two candidates"))
    }

    pub fn match_label(&self, output_text: &str, candidates: &[String]) -> Result<String, EvalError> {
        self.match_index(output_text, candidates).map(|i| candidates[i].clone())
    }
}

pub fn match_label_by_similarity(output_text: &str, candidates: &[String], embedder: &dyn Embedder) -> Result<String, EvalError> {
    LabelMatcher::new(embedder).match_label(output_text, candidates)
}
