//! The extraction, synthesis, and writer agents, and the pipeline that runs
//! them after retrieval.

mod pipeline;
pub mod signatures;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::domain::{Paper, PaperExtraction, ReferenceEntry, RuntimeConfig, Synthesis};
use crate::llm::{call_signature, CompletionBackend, FieldMap, LlmError};

pub use pipeline::{run_pipeline, validate_config, PipelineDeps, PipelineError, RunHandle, SETUP_STAGE};

/// Abstracts longer than this many characters are cut before prompting.
pub const ABSTRACT_CHAR_LIMIT: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

fn take(fields: &mut FieldMap, name: &str) -> Vec<String> {
    fields.remove(name).unwrap_or_default()
}

fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

pub async fn run_extraction(
    llm: &dyn CompletionBackend,
    question: &str,
    paper: &Paper,
    config: &RuntimeConfig,
) -> Result<PaperExtraction, AgentError> {
    if paper.abstract_text.trim().is_empty() {
        return Err(AgentError::Precondition(format!("paper {} has no abstract", paper.id)));
    }
    let values = BTreeMap::from([
        ("question", question.to_string()),
        ("title", paper.title.clone()),
        (
            "abstract",
            truncate_chars(&paper.abstract_text, ABSTRACT_CHAR_LIMIT).to_string(),
        ),
    ]);
    let mut fields = call_signature(llm, &signatures::extraction(), &values, config).await?;
    Ok(PaperExtraction {
        paper_id: paper.id.clone(),
        claims: take(&mut fields, "claims"),
        methods: take(&mut fields, "methods"),
        datasets: take(&mut fields, "datasets"),
        results: take(&mut fields, "results"),
        limitations: take(&mut fields, "limitations"),
    })
}

/// One titled block per extraction, one line per non-empty list.
pub fn serialize_extractions(extractions: &[PaperExtraction]) -> String {
    extractions
        .iter()
        .map(|e| {
            let mut block = format!("### Paper {}", e.paper_id);
            for (name, items) in e.sections() {
                block.push('\n');
                block.push_str(name);
                block.push_str(": ");
                block.push_str(&if items.is_empty() {
                    "(none)".to_string()
                } else {
                    items.join("; ")
                });
            }
            block
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub async fn run_synthesis(
    llm: &dyn CompletionBackend,
    question: &str,
    extractions: &[PaperExtraction],
    config: &RuntimeConfig,
) -> Result<Synthesis, AgentError> {
    if extractions.is_empty() {
        return Err(AgentError::Precondition(
            "synthesis needs at least one extraction".into(),
        ));
    }
    let values = BTreeMap::from([
        ("question", question.to_string()),
        ("extractions", serialize_extractions(extractions)),
    ]);
    let mut fields = call_signature(llm, &signatures::synthesis(), &values, config).await?;
    Ok(Synthesis {
        consensus: take(&mut fields, "consensus"),
        contradictions: take(&mut fields, "contradictions"),
        open_gaps: take(&mut fields, "open_gaps"),
    })
}

/// `R<i>: <title> (<year>, <source>)`, one line per paper.
pub fn bibliography(papers: &[Paper], references: &[ReferenceEntry]) -> String {
    references
        .iter()
        .zip(papers)
        .map(|(r, p)| {
            let year = p.year.map(|y| y.to_string()).unwrap_or_else(|| "n.d.".into());
            format!("{}: {} ({year}, {})", r.label, p.title, p.source)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn bullet_block(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".into()
    } else {
        items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
    }
}

static LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[R(\d+)\]").expect("static regex"));
static REFERENCES_HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?mi)^\s{0,3}#{1,6}\s*references\s*#*\s*$").expect("static regex"));

/// Replaces labels outside `known` with `[?]`; one warning per distinct
/// unknown label, in order of first appearance.
pub fn sanitize_labels(draft: &str, known: &HashSet<&str>) -> (String, Vec<String>) {
    let mut unknown = BTreeSet::new();
    let mut warnings = Vec::new();
    let cleaned = LABEL.replace_all(draft, |caps: &regex::Captures<'_>| {
        let label = format!("R{}", &caps[1]);
        if known.contains(label.as_str()) {
            caps[0].to_string()
        } else {
            if unknown.insert(label.clone()) {
                warnings.push(format!("unknown citation label {label}"));
            }
            "[?]".to_string()
        }
    });
    (cleaned.into_owned(), warnings)
}

/// Markdown references section built from the retrieved papers.
pub fn references_section(papers: &[Paper], references: &[ReferenceEntry]) -> String {
    let mut out = String::from("## References\n");
    for (r, p) in references.iter().zip(papers) {
        let year = p.year.map(|y| y.to_string()).unwrap_or_else(|| "n.d.".into());
        let authors = if p.authors.is_empty() {
            "Unknown authors".to_string()
        } else {
            p.authors.join(", ")
        };
        out.push_str(&format!("\n- [{}] {authors} ({year}). {}. {}", r.label, p.title, p.url));
    }
    out.push('\n');
    out
}

/// Drafts the related-work section. The model only places inline labels;
/// unknown labels are neutralised and the references section is generated
/// here from `papers`.
pub async fn run_writer(
    llm: &dyn CompletionBackend,
    question: &str,
    synthesis: &Synthesis,
    papers: &[Paper],
    references: &[ReferenceEntry],
    config: &RuntimeConfig,
) -> Result<(String, Vec<String>), AgentError> {
    if papers.len() != references.len() || papers.iter().zip(references).any(|(p, r)| p.id != r.paper_id) {
        return Err(AgentError::Precondition("references do not match papers".into()));
    }
    let values = BTreeMap::from([
        ("question", question.to_string()),
        ("consensus", bullet_block(&synthesis.consensus)),
        ("contradictions", bullet_block(&synthesis.contradictions)),
        ("open_gaps", bullet_block(&synthesis.open_gaps)),
        ("bibliography", bibliography(papers, references)),
    ]);
    let mut fields = call_signature(llm, &signatures::writer(), &values, config).await?;
    let raw = take(&mut fields, signatures::DRAFT_FIELD)
        .into_iter()
        .next()
        .unwrap_or_default();
    Ok(finish_draft(&raw, papers, references))
}

/// Post-processing applied to the writer's raw markdown.
pub fn finish_draft(raw: &str, papers: &[Paper], references: &[ReferenceEntry]) -> (String, Vec<String>) {
    let body = match REFERENCES_HEADING.find(raw) {
        Some(m) => &raw[..m.start()],
        None => raw,
    };
    let known: HashSet<&str> = references.iter().map(|r| r.label.as_str()).collect();
    let (body, warnings) = sanitize_labels(body.trim_end(), &known);
    let mut draft = body;
    if !draft.is_empty() {
        draft.push_str("\n\n");
    }
    draft.push_str(&references_section(papers, references));
    (draft, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{assign_reference_labels, fixtures::paper};

    #[test]
    fn truncation_counts_chars() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("abc", 10), "abc");
        let long = "é".repeat(5000);
        assert_eq!(truncate_chars(&long, ABSTRACT_CHAR_LIMIT).chars().count(), 4000);
    }

    #[test]
    fn unknown_labels_become_question_marks() {
        let papers: Vec<Paper> = (1..=3).map(|i| paper(&format!("p{i}"), &format!("T{i}"))).collect();
        let refs = assign_reference_labels(&papers).unwrap();
        let (draft, warnings) = finish_draft("See [R1], [R99] and [R3]. Again [R99].", &papers, &refs);
        assert!(draft.starts_with("See [R1], [?] and [R3]. Again [?]."));
        assert_eq!(warnings, ["unknown citation label R99"]);
        let refs_at = draft.find("## References").unwrap();
        assert_eq!(draft[refs_at..].lines().filter(|l| l.starts_with("- [R")).count(), 3);
    }

    #[test]
    fn model_references_are_replaced() {
        let papers = vec![paper("p1", "T1")];
        let refs = assign_reference_labels(&papers).unwrap();
        let (draft, _) = finish_draft(
            "Body [R1].\n\n## References\n- [R1] made up\n- [R2] fake",
            &papers,
            &refs,
        );
        assert_eq!(draft.matches("## References").count(), 1);
        assert!(!draft.contains("made up"));
        assert!(!draft.contains("[?]"));
    }

    #[test]
    fn zero_labels_still_gets_references() {
        let papers = vec![paper("p1", "T1"), paper("p2", "T2")];
        let refs = assign_reference_labels(&papers).unwrap();
        let (draft, warnings) = finish_draft("No citations here.", &papers, &refs);
        assert!(warnings.is_empty());
        assert!(draft.contains("## References"));
        assert!(draft.contains("- [R2] A. Author (2024). T2. https://arxiv.org/abs/p2"));
    }

    #[test]
    fn bibliography_format() {
        let mut p = paper("p1", "Title One");
        p.year = None;
        let refs = assign_reference_labels(std::slice::from_ref(&p)).unwrap();
        assert_eq!(bibliography(&[p], &refs), "R1: Title One (n.d., arxiv)");
    }

    #[test]
    fn extraction_blocks() {
        let e = PaperExtraction {
            paper_id: "x".into(),
            claims: vec!["a".into(), "b".into()],
            ..Default::default()
        };
        assert_eq!(
            serialize_extractions(&[e]),
            "### Paper x\nclaims: a; b\nmethods: (none)\ndatasets: (none)\nresults: (none)\nlimitations: (none)"
        );
    }
}
