//! OpenAI-compatible chat-completion client with a content-addressed
//! response cache, bounded concurrency and retry with backoff.
//!
//! Cache key: hex SHA-256 of the compact JSON
//! `{"model":..,"temperature":..,"messages":[{"role":..,"content":..},..]}`
//! (fields in that order). Entries live at `<cache_dir>/<key[0..2]>/<key>.json`
//! and are written to a temporary file and renamed into place.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{ChatMessage, PromptSpec};
use super::LlmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Server root, e.g. `https://api.openai.com`; `/v1/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_s: u64,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com".into(),
            model: "gpt-4o-mini".into(),
            temperature: 1.0,
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_s: 120,
            concurrency: 8,
            cache_dir: None,
        }
    }
}

pub(crate) fn endpoint_url(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    let path = path.trim_start_matches('/');
    match (base.ends_with("/v1"), path.strip_prefix("v1/")) {
        (true, Some(rest)) => format!("{base}/{rest}"),
        _ => format!("{base}/{path}"),
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model: String,
    content: String,
}

pub fn request_key(model: &str, temperature: f64, messages: &[ChatMessage]) -> String {
    let body = serde_json::to_vec(&ChatRequest {
        model,
        temperature,
        messages,
    })
    .expect("request serialization is infallible");
    hex::encode(Sha256::digest(&body))
}

/// Memory cache in front of an optional on-disk cache.
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        ResponseCache {
            dir,
            memory: RwLock::new(HashMap::new()),
        }
    }

    fn path(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.memory.read().unwrap().get(key) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        let raw = std::fs::read(Self::path(dir, key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&raw).ok()?;
        if entry.key != key {
            return None;
        }
        self.memory.write().unwrap().insert(key.to_string(), entry.content.clone());
        Some(entry.content)
    }

    pub fn put(&self, key: &str, model: &str, content: &str) -> Result<(), LlmError> {
        if let Some(dir) = &self.dir {
            let path = Self::path(dir, key);
            let parent = path.parent().expect("cache path has a parent");
            std::fs::create_dir_all(parent).map_err(|e| LlmError::Cache(e.to_string()))?;
            let entry = CacheEntry {
                key: key.to_string(),
                model: model.to_string(),
                content: content.to_string(),
            };
            crate::fsutil::write_atomic(&path, serde_json::to_string(&entry).unwrap().as_bytes())
                .map_err(|e| LlmError::Cache(e.to_string()))?;
        }
        self.memory.write().unwrap().insert(key.to_string(), content.to_string());
        Ok(())
    }
}

pub struct ChatClient {
    config: EndpointConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    cache: ResponseCache,
    network_requests: AtomicU64,
    /// One lock per in-flight key, so identical concurrent calls hit the network once.
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

enum Attempt {
    Done(String),
    Retry { error: LlmError, retry_after: Option<Duration> },
    Fatal(LlmError),
}

impl ChatClient {
    /// Reads the bearer token from `config.api_key_env`; a missing variable
    /// means requests are sent without authorization.
    pub fn new(config: EndpointConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: EndpointConfig, api_key: Option<String>) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_s.max(1))))
            .build();
        ChatClient {
            cache: ResponseCache::new(config.cache_dir.clone()),
            agent: ureq::Agent::new_with_config(agent_config),
            api_key,
            config,
            network_requests: AtomicU64::new(0),
            inflight: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// HTTP requests actually sent, retries included.
    pub fn network_requests(&self) -> u64 {
        self.network_requests.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, spec: &PromptSpec) -> String {
        request_key(&self.config.model, self.config.temperature, &spec.messages())
    }

    /// Assistant message content for `spec`, served from cache when possible.
    pub fn call(&self, spec: &PromptSpec) -> Result<String, LlmError> {
        self.call_messages(&spec.messages())
    }

    pub fn call_messages(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let key = request_key(&self.config.model, self.config.temperature, messages);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let gate = {
            let mut map = self.inflight.lock().unwrap();
            Arc::clone(map.entry(key.clone()).or_default())
        };
        let result = {
            let _held = gate.lock().unwrap();
            match self.cache.get(&key) {
                Some(hit) => Ok(hit),
                None => self.fetch_with_retry(messages).and_then(|content| {
                    self.cache.put(&key, &self.config.model, &content)?;
                    Ok(content)
                }),
            }
        };
        self.inflight.lock().unwrap().remove(&key);
        result
    }

    /// Run many prompts on at most `concurrency` threads; results keep input order.
    pub fn call_many(&self, specs: &[PromptSpec]) -> Vec<Result<String, LlmError>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<String, LlmError>>>> = specs.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.concurrency.clamp(1, specs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= specs.len() {
                        break;
                    }
                    let r = self.call(&specs[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let max = Duration::from_millis(self.config.max_backoff_ms);
        if let Some(ra) = retry_after {
            return ra.min(max);
        }
        let base = self
            .config
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.max_backoff_ms);
        // Jitter over [base/2, base].
        let jittered = base / 2 + rand::rng().random_range(0..=base - base / 2);
        Duration::from_millis(jittered)
    }

    fn fetch_with_retry(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let mut attempt = 0u32;
        loop {
            match self.fetch_once(messages) {
                Attempt::Done(content) => return Ok(content),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { error, retry_after } => {
                    if attempt >= self.config.max_retries {
                        return Err(match error {
                            LlmError::RateLimited { .. } => LlmError::RateLimited { attempts: attempt + 1 },
                            other => other,
                        });
                    }
                    let wait = self.backoff(attempt, retry_after);
                    log::warn!("chat request failed ({error}); retry {} in {:?}", attempt + 1, wait);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn fetch_once(&self, messages: &[ChatMessage]) -> Attempt {
        let url = endpoint_url(&self.config.base_url, "v1/chat/completions");
        let body = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            messages,
        };
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        self.network_requests.fetch_add(1, Ordering::SeqCst);
        let mut resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry {
                    error: LlmError::Timeout,
                    retry_after: None,
                }
            }
            Err(e) => {
                return Attempt::Retry {
                    error: LlmError::Transport(e.to_string()),
                    retry_after: None,
                }
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry {
                    error: LlmError::Timeout,
                    retry_after: None,
                }
            }
            Err(e) => {
                return Attempt::Retry {
                    error: LlmError::Transport(e.to_string()),
                    retry_after: None,
                }
            }
        };
        match status {
            200..=299 => match serde_json::from_str::<ChatResponse>(&text) {
                Ok(parsed) => match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
                    Some(content) => Attempt::Done(content),
                    None => Attempt::Fatal(LlmError::BadResponse("no assistant content".into())),
                },
                Err(e) => Attempt::Fatal(LlmError::BadResponse(e.to_string())),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth { status }),
            429 => Attempt::Retry {
                error: LlmError::RateLimited { attempts: 0 },
                retry_after,
            },
            408 | 500..=599 => Attempt::Retry {
                error: LlmError::Http { status, body: truncate(&text) },
                retry_after,
            },
            _ => Attempt::Fatal(LlmError::Http { status, body: truncate(&text) }),
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(endpoint_url("http://h:1/", "v1/chat/completions"), "http://h:1/v1/chat/completions");
        assert_eq!(endpoint_url("http://h:1/v1", "/v1/chat/completions"), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn key_depends_on_model_temperature_and_messages() {
        let m = vec![ChatMessage { role: "user".into(), content: "hi".into() }];
        let base = request_key("m", 1.0, &m);
        assert_eq!(base, request_key("m", 1.0, &m));
        assert_ne!(base, request_key("m2", 1.0, &m));
        assert_ne!(base, request_key("m", 0.7, &m));
        let other = vec![ChatMessage { role: "user".into(), content: "hi!".into() }];
        assert_ne!(base, request_key("m", 1.0, &other));
        assert_eq!(base.len(), 64);
    }

    #[test]
    fn disk_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(Some(dir.path().to_path_buf()));
        let key = request_key("m", 1.0, &[]);
        assert!(cache.get(&key).is_none());
        cache.put(&key, "m", "hello").unwrap();
        // A fresh cache over the same directory sees the entry.
        let reopened = ResponseCache::new(Some(dir.path().to_path_buf()));
        assert_eq!(reopened.get(&key).as_deref(), Some("hello"));
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).exists());
    }
}
