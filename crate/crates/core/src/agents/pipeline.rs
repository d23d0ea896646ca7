use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde_json::json;
use thiserror::Error;
use tracing::Instrument;

use super::{run_extraction, run_synthesis, run_writer, AgentError};
use crate::domain::{
    assign_reference_labels, new_id, now_utc, redact, Agent, PaperExtraction, Provider, Report, RuntimeConfig,
};
use crate::embeddings::{Embedder, TextEmbedder};
use crate::events::{EventSink, RunEmitter};
use crate::llm::CompletionBackend;
use crate::search::PaperSearch;
use crate::store::ReportStore;

/// Stage name reported for failures before the first agent starts.
pub const SETUP_STAGE: &str = "setup";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub message: String,
}

/// One pipeline invocation.
#[derive(Debug, Clone)]
pub struct RunHandle {
    pub run_id: String,
    pub question: String,
    pub config: RuntimeConfig,
    pub started_at: DateTime<Utc>,
}

impl RunHandle {
    pub fn new(question: &str, config: RuntimeConfig) -> Self {
        RunHandle {
            run_id: new_id(),
            question: question.trim().to_string(),
            config,
            started_at: now_utc(),
        }
    }
}

/// Collaborators the pipeline needs. Without an explicit `embedder`, one is
/// built from the run's configuration.
#[derive(Clone)]
pub struct PipelineDeps {
    pub search: Arc<dyn PaperSearch>,
    pub llm: Arc<dyn CompletionBackend>,
    pub store: Option<ReportStore>,
    pub embedder: Option<Arc<dyn TextEmbedder>>,
}

/// Checks what every provider call will need.
pub fn validate_config(config: &RuntimeConfig) -> Result<(), String> {
    if config.model.trim().is_empty() {
        return Err("configuration error: model is not set".into());
    }
    let has_key = config.api_key.as_ref().is_some_and(|k| !k.expose().is_empty());
    if config.provider != Provider::Mock && !has_key {
        return Err(format!(
            "configuration error: provider {} requires an API key (set RP_API_KEY or supply an api_key override)",
            config.provider
        ));
    }
    Ok(())
}

struct StageFailure {
    stage: Agent,
    message: String,
}

impl StageFailure {
    fn new(stage: Agent, err: impl std::fmt::Display) -> Self {
        StageFailure {
            stage,
            message: err.to_string(),
        }
    }
}

/// Runs search → extraction → synthesis → writer, persists the report, and
/// streams lifecycle events to `sink`.
///
/// Every run emits `queued` first and exactly one terminal event last. A
/// stage that fails still closes with `agent_completed` (status `failed`)
/// before the terminal `error`, so traces always follow
/// `queued (started progress* completed)* (done | error)`.
pub async fn run_pipeline(
    question: &str,
    config: &RuntimeConfig,
    deps: &PipelineDeps,
    sink: &dyn EventSink,
) -> Result<Report, PipelineError> {
    let run = RunHandle::new(question, config.clone());
    let span = tracing::info_span!("run", run_id = %run.run_id);
    run_with_handle(run, deps, sink).instrument(span).await
}

async fn run_with_handle(run: RunHandle, deps: &PipelineDeps, sink: &dyn EventSink) -> Result<Report, PipelineError> {
    let config = &run.config;
    let emitter = RunEmitter::new(sink);
    emitter.queued(&run.question);

    let setup = if run.question.is_empty() {
        Err("question must not be empty".to_string())
    } else {
        validate_config(config)
    };
    if let Err(message) = setup {
        emitter.error(SETUP_STAGE, &message);
        return Err(PipelineError {
            stage: SETUP_STAGE.into(),
            message,
        });
    }

    match execute(&run, deps, &emitter).await {
        Ok(report) => {
            emitter.done(&report.report_id);
            tracing::info!(report_id = %report.report_id, papers = report.papers.len(), "run complete");
            Ok(report)
        }
        Err(failure) => {
            let message = redact(&failure.message, config.api_key.as_ref());
            emitter.completed(failure.stage, json!({ "status": "failed", "error": message }));
            emitter.error(failure.stage.as_str(), &message);
            tracing::warn!(stage = %failure.stage, %message, "run failed");
            Err(PipelineError {
                stage: failure.stage.as_str().into(),
                message,
            })
        }
    }
}

async fn execute(run: &RunHandle, deps: &PipelineDeps, emitter: &RunEmitter<'_>) -> Result<Report, StageFailure> {
    let question = run.question.as_str();
    let config = &run.config;
    let llm = deps.llm.as_ref();

    emitter.started(Agent::Search);
    let found = deps
        .search
        .search(question, emitter)
        .await
        .map_err(|e| StageFailure::new(Agent::Search, e))?;
    let papers = found.papers;
    let mut warnings = found.warnings;
    emitter.completed(
        Agent::Search,
        json!({
            "status": "ok",
            "paper_count": papers.len(),
            "warning_count": warnings.len(),
            "warnings": warnings,
        }),
    );

    emitter.started(Agent::Extraction);
    let total = papers.len();
    let mut extractions: Vec<PaperExtraction> = Vec::with_capacity(total);
    for (i, paper) in papers.iter().enumerate() {
        let extraction = run_extraction(llm, question, paper, config)
            .await
            .map_err(|e| StageFailure::new(Agent::Extraction, e))?;
        extractions.push(extraction);
        emitter.progress(Agent::Extraction, json!({ "current": i + 1, "total": total }));
    }
    emitter.completed(
        Agent::Extraction,
        json!({ "status": "ok", "extraction_count": extractions.len() }),
    );

    emitter.started(Agent::Synthesis);
    let synthesis = run_synthesis(llm, question, &extractions, config)
        .await
        .map_err(|e| StageFailure::new(Agent::Synthesis, e))?;
    emitter.completed(
        Agent::Synthesis,
        json!({
            "status": "ok",
            "consensus": synthesis.consensus.len(),
            "contradictions": synthesis.contradictions.len(),
            "open_gaps": synthesis.open_gaps.len(),
        }),
    );

    emitter.started(Agent::Writer);
    let references = assign_reference_labels(&papers).map_err(|e| StageFailure::new(Agent::Writer, e))?;
    let (draft_markdown, writer_warnings) = run_writer(llm, question, &synthesis, &papers, &references, config)
        .await
        .map_err(|e: AgentError| StageFailure::new(Agent::Writer, e))?;
    emitter.completed(
        Agent::Writer,
        json!({
            "status": "ok",
            "draft_chars": draft_markdown.chars().count(),
            "warnings": writer_warnings,
        }),
    );
    warnings.extend(writer_warnings);

    let mut report = Report {
        report_id: new_id(),
        question: question.to_string(),
        papers,
        extractions,
        synthesis,
        draft_markdown,
        warnings,
        references,
        created_at: now_utc(),
    };
    report.validate().map_err(|e| StageFailure::new(Agent::Writer, e))?;

    if let Some(store) = &deps.store {
        persist(store, &mut report, deps, config).await;
    }
    Ok(report)
}

/// Saves the report. Failures become report warnings; the run still succeeds.
async fn persist(store: &ReportStore, report: &mut Report, deps: &PipelineDeps, config: &RuntimeConfig) {
    let fallback;
    let embedder: &dyn TextEmbedder = match &deps.embedder {
        Some(e) => e.as_ref(),
        None => {
            fallback = Embedder::new(config.clone());
            &fallback
        }
    };
    match store.save_report(report, embedder).await {
        Ok(outcome) if outcome.warnings.is_empty() => {}
        Ok(outcome) => {
            report.warnings.extend(outcome.warnings);
            if let Err(e) = store.save_report_row(report) {
                report.warnings.push(format!("report persistence failed: {e}"));
            }
        }
        Err(e) => {
            tracing::error!(error = %e, "report persistence failed");
            report.warnings.push(format!("report persistence failed: {e}"));
        }
    }
}
