//! Literature-review assistant core.
//!
//! A research question flows through four fixed stages: scholarly search
//! ([`search`]), per-paper structured extraction, cross-paper synthesis, and
//! related-work drafting ([`agents`]). Each run streams lifecycle events
//! ([`events`]), and completed reports are persisted with semantic history
//! search ([`store`], [`embeddings`]). [`api`] serves all of it over HTTP.

pub mod agents;
pub mod api;
pub mod config;
pub mod domain;
pub mod embeddings;
pub mod events;
pub mod llm;
pub mod search;
pub mod store;
#[cfg(feature = "testkit")]
pub mod testkit;

pub use domain::{
    Agent, EmbeddingMode, EventType, Paper, PaperExtraction, PipelineEvent, Provider, ReferenceEntry, Report,
    RuntimeConfig, Secret, Source, Synthesis,
};
