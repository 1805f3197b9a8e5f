//! LLM-assisted generation: prompt construction, the chat-completion client
//! and strict parsing of model replies into validated items.

mod client;
mod parse;
mod prompt;
mod validate;

use std::collections::BTreeMap;

use thiserror::Error;

pub use client::{request_key, ChatClient, EndpointConfig, ResponseCache};
pub use parse::{parse_llm_output, parse_llm_output_with, LlmResponseBatch, Rejected};
pub use prompt::{
    build_prompt, build_prompt_with, default_request, load_examples, render_clip_context, ChatMessage,
    DimensionExample, MusicDimension, PromptConfig, PromptSpec, RequestSlot, DEFAULT_SYSTEM_TEXT,
};
pub use validate::{mcq_stem, normalize_item, validate_qa_item, violations, ValidationRules};

use crate::corpus::ClipRecord;
use crate::qa::QaItem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("clip {0} has neither caption nor metadata")]
    NoContext(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed completion: {0}")]
    BadResponse(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl LlmError {
    /// Whether the failure came from the remote service rather than local input.
    pub fn is_service_error(&self) -> bool {
        !matches!(self, LlmError::NoContext(_) | LlmError::Config(_) | LlmError::Cache(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LlmRunReport {
    pub clips: u64,
    pub skipped_no_context: u64,
    pub requested: u64,
    pub parsed: u64,
    pub rejected: u64,
    pub rejection_reasons: BTreeMap<String, u64>,
    pub failed_calls: Vec<(String, String)>,
}

impl LlmRunReport {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.parsed + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }
}

/// Prompt every clip that has context, call the endpoint and keep the
/// validated items. Items come back sorted by `qa_id`.
///
/// Authentication failures abort the run; other per-clip failures are
/// recorded in the report.
pub fn run_llm_generation(
    client: &ChatClient,
    clips: &[ClipRecord],
    examples: &[DimensionExample],
    requested: &[RequestSlot],
    prompt: &PromptConfig,
    rules: &ValidationRules,
) -> Result<(Vec<QaItem>, LlmRunReport), LlmError> {
    let mut report = LlmRunReport::default();
    let mut specs = Vec::new();
    let mut owners = Vec::new();
    for clip in clips {
        report.clips += 1;
        match build_prompt_with(clip, examples, requested, prompt) {
            Ok(spec) => {
                report.requested += spec.total_requested() as u64;
                specs.push(spec);
                owners.push(clip);
            }
            Err(LlmError::NoContext(_)) => report.skipped_no_context += 1,
            Err(e) => return Err(e),
        }
    }
    let replies = client.call_many(&specs);
    let mut items = Vec::new();
    for (clip, reply) in owners.into_iter().zip(replies) {
        match reply {
            Ok(raw) => {
                let batch = parse_llm_output_with(&raw, clip, rules);
                report.parsed += batch.parsed.len() as u64;
                report.rejected += batch.rejected.len() as u64;
                for r in &batch.rejected {
                    *report.rejection_reasons.entry(r.reason.clone()).or_default() += 1;
                }
                items.extend(batch.parsed);
            }
            Err(e @ LlmError::Auth { .. }) => return Err(e),
            Err(e) => {
                log::warn!("clip {}: {e}", clip.audio_id);
                report.failed_calls.push((clip.audio_id.clone(), e.to_string()));
            }
        }
    }
    items.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    Ok((items, report))
}
