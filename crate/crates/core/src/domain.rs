//! Value types shared by every pipeline stage.
//!
//! Everything here is an immutable value once constructed. Serialization
//! follows the wire schema used by the HTTP API and the report store:
//! snake_case enums, RFC 3339 UTC timestamps with millisecond precision,
//! and `null` for absent optional fields.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on papers carried by one report.
pub const MAX_PAPERS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("corrupted input: duplicate paper id {0:?}")]
    DuplicatePaperId(String),
    #[error("report invariant violated: {0}")]
    InvalidReport(String),
    #[error("unknown {kind} value {value:?}")]
    UnknownVariant { kind: &'static str, value: String },
}

/// Current UTC time truncated to milliseconds so it survives an RFC 3339
/// round trip unchanged.
pub fn now_utc() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

/// Serde adapter writing `DateTime<Utc>` as `2026-03-14T10:00:00.000Z`.
pub mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(DomainError::UnknownVariant { kind: $kind, value: other.to_string() }),
                }
            }
        }
    };
}

string_enum!(
    /// Scholarly index a paper was retrieved from.
    Source, "source" {
        SemanticScholar => "semantic_scholar",
        Arxiv => "arxiv",
    }
);

string_enum!(
    /// The four fixed pipeline stages, in execution order.
    Agent, "agent" {
        Search => "search",
        Extraction => "extraction",
        Synthesis => "synthesis",
        Writer => "writer",
    }
);

string_enum!(
    EventType, "event type" {
        Queued => "queued",
        AgentStarted => "agent_started",
        AgentProgress => "agent_progress",
        AgentCompleted => "agent_completed",
        Done => "done",
        Error => "error",
    }
);

string_enum!(
    Provider, "provider" {
        OpenAiCompatible => "openai_compatible",
        Anthropic => "anthropic",
        Mock => "mock",
    }
);

string_enum!(
    EmbeddingMode, "embedding mode" {
        Remote => "remote",
        Local => "local",
        Auto => "auto",
    }
);

impl EventType {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventType::Done | EventType::Error)
    }

    /// Whether events of this type carry an `agent` field.
    pub fn is_agent_scoped(self) -> bool {
        matches!(
            self,
            EventType::AgentStarted | EventType::AgentProgress | EventType::AgentCompleted
        )
    }
}

/// One retrieved scholarly record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paper {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub source: Source,
    pub url: String,
    pub year: Option<i32>,
    pub authors: Vec<String>,
    pub doi: Option<String>,
}

/// Five-array structured summary of one abstract.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperExtraction {
    pub paper_id: String,
    pub claims: Vec<String>,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub results: Vec<String>,
    pub limitations: Vec<String>,
}

impl PaperExtraction {
    /// `(name, items)` pairs in canonical field order.
    pub fn sections(&self) -> [(&'static str, &[String]); 5] {
        [
            ("claims", &self.claims),
            ("methods", &self.methods),
            ("datasets", &self.datasets),
            ("results", &self.results),
            ("limitations", &self.limitations),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthesis {
    pub consensus: Vec<String>,
    pub contradictions: Vec<String>,
    pub open_gaps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub label: String,
    pub paper_id: String,
}

/// The persisted bundle produced by one completed run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub question: String,
    pub papers: Vec<Paper>,
    pub extractions: Vec<PaperExtraction>,
    pub synthesis: Synthesis,
    pub draft_markdown: String,
    pub warnings: Vec<String>,
    pub references: Vec<ReferenceEntry>,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
}

impl Report {
    /// Checks every structural invariant a report must satisfy.
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: String| Err(DomainError::InvalidReport(msg));
        if self.report_id.is_empty() {
            return bad("empty report_id".into());
        }
        if self.question.trim().is_empty() {
            return bad("empty question".into());
        }
        if self.papers.len() > MAX_PAPERS {
            return bad(format!("{} papers exceeds cap {MAX_PAPERS}", self.papers.len()));
        }
        let mut ids = HashSet::new();
        for p in &self.papers {
            if p.id.is_empty() {
                return bad("paper with empty id".into());
            }
            if p.abstract_text.trim().is_empty() {
                return bad(format!("paper {} has empty abstract", p.id));
            }
            if !ids.insert(p.id.as_str()) {
                return bad(format!("duplicate paper id {}", p.id));
            }
        }
        if self.extractions.len() != self.papers.len() {
            return bad(format!(
                "{} extractions for {} papers",
                self.extractions.len(),
                self.papers.len()
            ));
        }
        let mut seen = HashSet::new();
        for e in &self.extractions {
            if !ids.contains(e.paper_id.as_str()) || !seen.insert(e.paper_id.as_str()) {
                return bad(format!("extraction paper_id {} not bijective", e.paper_id));
            }
        }
        let expected = assign_reference_labels(&self.papers)?;
        if expected != self.references {
            return bad("references are not R1..Rn over papers in order".into());
        }
        Ok(())
    }
}

/// One streamed lifecycle record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEvent {
    #[serde(rename = "type")]
    pub kind: EventType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<Agent>,
    pub seq: u64,
    #[serde(with = "rfc3339")]
    pub ts: DateTime<Utc>,
    #[serde(default)]
    pub data: serde_json::Value,
}

/// An API key. Never printed, never serialized.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret([REDACTED])")
    }
}

/// Replaces every occurrence of any of `secrets` inside `text`.
pub fn redact<'a>(text: &str, secrets: impl IntoIterator<Item = &'a Secret>) -> String {
    let mut out = text.to_string();
    for s in secrets {
        if !s.0.is_empty() && out.contains(&s.0) {
            out = out.replace(&s.0, "[REDACTED]");
        }
    }
    out
}

/// Provider and embedding settings for one run. Not `Serialize`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub provider: Provider,
    pub model: String,
    pub api_key: Option<Secret>,
    pub base_url: Option<String>,
    pub embedding_mode: EmbeddingMode,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            provider: Provider::Mock,
            model: "mock-1".to_string(),
            api_key: None,
            base_url: None,
            embedding_mode: EmbeddingMode::Auto,
        }
    }
}

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, collapses whitespace runs to one space, and trims.
pub fn normalize_title(title: &str) -> String {
    let kept: String = title
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric runs of `text`, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Labels papers `R1..Rn` in input order.
pub fn assign_reference_labels(papers: &[Paper]) -> Result<Vec<ReferenceEntry>, DomainError> {
    let mut seen = HashSet::with_capacity(papers.len());
    papers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !seen.insert(p.id.as_str()) {
                return Err(DomainError::DuplicatePaperId(p.id.clone()));
            }
            Ok(ReferenceEntry {
                label: format!("R{}", i + 1),
                paper_id: p.id.clone(),
            })
        })
        .collect()
}

/// New 26-character, time-ordered identifier.
pub fn new_id() -> String {
    ulid::Ulid::new().to_string()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn paper(id: &str, title: &str) -> Paper {
        Paper {
            id: id.to_string(),
            title: title.to_string(),
            abstract_text: format!("Abstract of {title}."),
            source: Source::Arxiv,
            url: format!("https://arxiv.org/abs/{id}"),
            year: Some(2024),
            authors: vec!["A. Author".into()],
            doi: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::paper;
    use super::*;
    use proptest::prelude::*;

    /// Character-level restatement of the normalization rules.
    fn normalize_reference(title: &str) -> String {
        let mut out = String::new();
        let mut pending_space = false;
        for c in title.chars() {
            for lc in c.to_lowercase() {
                if lc.is_whitespace() {
                    pending_space = !out.is_empty();
                } else if lc.is_alphanumeric() {
                    if pending_space {
                        out.push(' ');
                        pending_space = false;
                    }
                    out.push(lc);
                }
            }
        }
        out
    }

    #[test]
    fn normalize_title_examples() {
        assert_eq!(
            normalize_title("Attention Is All You Need"),
            "attention is all you need"
        );
        assert_eq!(
            normalize_title("  Graph   Neural-Networks: A Survey! "),
            "graph neuralnetworks a survey"
        );
        assert_eq!(
            normalize_reference("  Graph   Neural-Networks: A Survey! "),
            "graph neuralnetworks a survey"
        );
        assert_eq!(normalize_title(""), "");
        assert_eq!(normalize_title(" \t\n"), "");
    }

    #[test]
    fn reference_labels_small_cases() {
        assert!(assign_reference_labels(&[]).unwrap().is_empty());
        let p = paper("a", "A");
        assert_eq!(
            assign_reference_labels(std::slice::from_ref(&p)).unwrap(),
            vec![ReferenceEntry {
                label: "R1".into(),
                paper_id: "a".into()
            }]
        );
    }

    #[test]
    fn reference_labels_ten_papers_match_zip_oracle() {
        let papers: Vec<Paper> = (0..10).map(|i| paper(&format!("p{i}"), "t")).collect();
        let labels = assign_reference_labels(&papers).unwrap();
        let oracle: Vec<(String, String)> = (1..=10)
            .map(|i| format!("R{i}"))
            .zip(papers.iter().map(|p| p.id.clone()))
            .collect();
        let got: Vec<(String, String)> = labels.into_iter().map(|r| (r.label, r.paper_id)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = assign_reference_labels(&[paper("x", "a"), paper("x", "b")]).unwrap_err();
        assert_eq!(err, DomainError::DuplicatePaperId("x".into()));
    }

    #[test]
    fn secret_debug_is_redacted() {
        let cfg = RuntimeConfig {
            api_key: Some(Secret::new("sk-SENTINEL-123")),
            ..RuntimeConfig::default()
        };
        assert!(!format!("{cfg:?}").contains("SENTINEL"));
        assert_eq!(
            redact("key sk-SENTINEL-123 leaked", cfg.api_key.as_ref()),
            "key [REDACTED] leaked"
        );
    }

    #[test]
    fn enums_round_trip_through_strings() {
        for p in Provider::ALL {
            assert_eq!(p.as_str().parse::<Provider>().unwrap(), *p);
        }
        assert!("groq".parse::<Provider>().is_err());
        assert_eq!(
            serde_json::to_string(&Source::SemanticScholar).unwrap(),
            "\"semantic_scholar\""
        );
    }

    #[test]
    fn event_omits_agent_when_absent() {
        let ev = PipelineEvent {
            kind: EventType::Queued,
            agent: None,
            seq: 0,
            ts: "2026-03-14T10:00:00Z".parse().unwrap(),
            data: serde_json::json!({}),
        };
        assert_eq!(
            serde_json::to_string(&ev).unwrap(),
            r#"{"type":"queued","seq":0,"ts":"2026-03-14T10:00:00.000Z","data":{}}"#
        );
    }

    proptest! {
        #[test]
        fn normalize_title_is_idempotent(t in "\\PC{0,40}") {
            let once = normalize_title(&t);
            prop_assert_eq!(normalize_title(&once), once.clone());
        }

        #[test]
        fn normalize_title_matches_reference(t in "[a-zA-Z0-9 \\t:!,.'()\\-ÄéßİΣ]{0,40}") {
            prop_assert_eq!(normalize_title(&t), normalize_reference(&t));
        }

        #[test]
        fn labels_parse_back_to_one_through_n(n in 0usize..30) {
            let papers: Vec<Paper> = (0..n).map(|i| paper(&format!("id{i}"), "t")).collect();
            let labels = assign_reference_labels(&papers).unwrap();
            prop_assert_eq!(labels.len(), n);
            let nums: Vec<usize> = labels
                .iter()
                .map(|r| r.label.strip_prefix('R').unwrap().parse().unwrap())
                .collect();
            prop_assert_eq!(nums, (1..=n).collect::<Vec<_>>());
        }
    }
}
