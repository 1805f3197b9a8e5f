//! Music-grounded question-answering dataset toolkit.
//!
//! The pipeline turns clip metadata into (audio, question, answer) items and
//! scores model outputs against them:
//!
//! - [`ontology`]: AudioSet-style label graph, leaf and ancestor queries
//! - [`corpus`]: clip manifests, music-leaf filtering, label frequencies
//! - [`rulegen`]: template-driven open / binary / multiple-choice generation
//! - [`llmgen`]: few-shot prompting of a chat-completion endpoint and response parsing
//! - [`assembly`]: merge, dedup, split, shard and per-source statistics
//! - [`eval`]: answer extraction, accuracy, similarity matching, exact-match METEOR
//! - [`cli`]: the `musicskills` command line over all of the above
//!
//! All generation is a pure function of its inputs and a global seed.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod fsutil;
pub mod llmgen;
pub mod mockserver;
pub mod ontology;
pub mod qa;
pub mod rulegen;

pub use corpus::{ClipRecord, LabelFrequencyTable};
pub use ontology::{LabelId, Ontology, OntologyNode};
pub use qa::{Method, QaFormat, QaItem, Source};
