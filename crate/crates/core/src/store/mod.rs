//! Report persistence with semantic history search.
//!
//! Reports live in one SQLite table as canonical JSON documents. Vectors for
//! each report (its question), each paper (title and abstract), and each
//! extraction (its five lists) go to a [`VectorIndex`]. History search ranks
//! report vectors by cosine similarity and falls back to token overlap over
//! stored questions whenever the vector path is unavailable.

mod vector;

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{rfc3339, tokenize, DomainError, Report};
use crate::embeddings::TextEmbedder;

pub use vector::{
    pack_f32_le, rank, unpack_f32_le, DisabledVectorIndex, SqliteVectorIndex, StoredVector, VectorIndex, VectorKind,
};

pub const DEFAULT_DB_PATH: &str = "./researchpilot.db";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("report not found: {0}")]
    NotFound(String),
    #[error("database error: {0}")]
    Database(String),
    #[error("vector index error: {0}")]
    VectorIndex(String),
    #[error("stored payload is invalid: {0}")]
    Payload(String),
    #[error(transparent)]
    InvalidReport(#[from] DomainError),
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        StoreError::Database(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Vector,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub report_id: String,
    pub question: String,
    pub score: f64,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub report_id: String,
    pub question: String,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaveOutcome {
    pub report_id: String,
    pub warnings: Vec<String>,
}

/// Serializes a report with sorted keys and arrays in domain order.
pub fn canonical_json(report: &Report) -> String {
    // serde_json's default map is a BTreeMap, so going through Value sorts keys.
    serde_json::to_value(report).expect("report serializes").to_string()
}

/// Share of distinct query tokens that occur in `question`.
pub fn keyword_score(query: &str, question: &str) -> f64 {
    let q: HashSet<String> = tokenize(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let t: HashSet<String> = tokenize(question).into_iter().collect();
    q.intersection(&t).count() as f64 / q.len() as f64
}

fn paper_key(report_id: &str, paper_id: &str) -> String {
    format!("{report_id}/paper/{paper_id}")
}

fn extraction_key(report_id: &str, paper_id: &str) -> String {
    format!("{report_id}/extraction/{paper_id}")
}

fn parse_ts(raw: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| StoreError::Payload(format!("bad timestamp {raw:?}: {e}")))
}

/// SQLite-backed report store. Cloning shares the connection.
#[derive(Clone)]
pub struct ReportStore {
    conn: Arc<Mutex<Connection>>,
    index: Arc<dyn VectorIndex>,
}

impl ReportStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(
            "CREATE TABLE IF NOT EXISTS reports (
                 report_id  TEXT PRIMARY KEY,
                 question   TEXT NOT NULL,
                 created_at TEXT NOT NULL,
                 payload    TEXT NOT NULL
             );
             CREATE INDEX IF NOT EXISTS reports_by_created ON reports (created_at);
             CREATE TABLE IF NOT EXISTS vectors (
                 key        TEXT NOT NULL,
                 kind       TEXT NOT NULL,
                 owner      TEXT NOT NULL,
                 provenance TEXT NOT NULL,
                 data       BLOB NOT NULL,
                 PRIMARY KEY (key, kind)
             );
             CREATE INDEX IF NOT EXISTS vectors_by_owner ON vectors (owner);",
        )?;
        let conn = Arc::new(Mutex::new(conn));
        let index = Arc::new(SqliteVectorIndex::new(conn.clone()));
        Ok(ReportStore { conn, index })
    }

    /// Swaps the vector index (e.g. for [`DisabledVectorIndex`]).
    pub fn with_vector_index(mut self, index: Arc<dyn VectorIndex>) -> Self {
        self.index = index;
        self
    }

    pub fn without_vector_index(self) -> Self {
        self.with_vector_index(Arc::new(DisabledVectorIndex))
    }

    pub fn vector_index(&self) -> &Arc<dyn VectorIndex> {
        &self.index
    }

    /// Writes (or overwrites) the relational row only.
    pub fn save_report_row(&self, report: &Report) -> Result<(), StoreError> {
        report.validate()?;
        let payload = canonical_json(report);
        let conn = self.conn.lock().expect("store connection poisoned");
        conn.execute(
            "INSERT INTO reports (report_id, question, created_at, payload) VALUES (?1, ?2, ?3, ?4)
             ON CONFLICT(report_id) DO UPDATE SET
                 question = excluded.question, created_at = excluded.created_at, payload = excluded.payload",
            params![
                report.report_id,
                report.question,
                rfc3339::format(&report.created_at),
                payload
            ],
        )?;
        Ok(())
    }

    /// Persists the report and upserts its vectors. Vector trouble never
    /// fails the save; it comes back as warnings.
    pub async fn save_report(&self, report: &Report, embedder: &dyn TextEmbedder) -> Result<SaveOutcome, StoreError> {
        self.save_report_row(report)?;
        let mut warnings = Vec::new();
        match self.build_vectors(report, embedder).await {
            Ok(vectors) => {
                if let Err(e) = self.index.replace_owned(&report.report_id, &vectors) {
                    tracing::warn!(error = %e, report_id = %report.report_id, "vector write failed");
                    warnings.push(format!("vector index write failed, report saved without vectors: {e}"));
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, report_id = %report.report_id, "embedding failed");
                warnings.push(format!("embedding failed, report saved without vectors: {e}"));
            }
        }
        Ok(SaveOutcome {
            report_id: report.report_id.clone(),
            warnings,
        })
    }

    async fn build_vectors(
        &self,
        report: &Report,
        embedder: &dyn TextEmbedder,
    ) -> Result<Vec<StoredVector>, crate::embeddings::EmbeddingError> {
        let id = &report.report_id;
        let mut out = Vec::with_capacity(1 + 2 * report.papers.len());
        out.push(StoredVector {
            key: id.clone(),
            vector: embedder.embed(&report.question).await?,
            kind: VectorKind::Report,
        });
        for p in &report.papers {
            out.push(StoredVector {
                key: paper_key(id, &p.id),
                vector: embedder.embed(&format!("{}\n{}", p.title, p.abstract_text)).await?,
                kind: VectorKind::Paper,
            });
        }
        for e in &report.extractions {
            let text = e
                .sections()
                .iter()
                .flat_map(|(_, items)| items.iter().map(String::as_str))
                .collect::<Vec<_>>()
                .join("\n");
            out.push(StoredVector {
                key: extraction_key(id, &e.paper_id),
                vector: embedder.embed(&text).await?,
                kind: VectorKind::Extraction,
            });
        }
        Ok(out)
    }

    /// The stored canonical JSON document for `report_id`.
    pub fn get_report_payload(&self, report_id: &str) -> Result<String, StoreError> {
        let conn = self.conn.lock().expect("store connection poisoned");
        conn.query_row(
            "SELECT payload FROM reports WHERE report_id = ?1",
            params![report_id],
            |r| r.get(0),
        )
        .optional()?
        .ok_or_else(|| StoreError::NotFound(report_id.to_string()))
    }

    pub fn get_report(&self, report_id: &str) -> Result<Report, StoreError> {
        let payload = self.get_report_payload(report_id)?;
        let report: Report = serde_json::from_str(&payload).map_err(|e| StoreError::Payload(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    /// Newest first.
    pub fn list_reports(&self, limit: usize) -> Result<Vec<ReportSummary>, StoreError> {
        let conn = self.conn.lock().expect("store connection poisoned");
        let mut stmt = conn.prepare(
            "SELECT report_id, question, created_at FROM reports
             ORDER BY created_at DESC, report_id DESC LIMIT ?1",
        )?;
        let rows = stmt.query_map(params![limit as i64], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?))
        })?;
        rows.map(|row| {
            let (report_id, question, ts) = row?;
            Ok(ReportSummary {
                report_id,
                question,
                created_at: parse_ts(&ts)?,
            })
        })
        .collect()
    }

    pub fn vector_search(&self, query: &[f32], kind: VectorKind, k: usize) -> Result<Vec<(String, f64)>, StoreError> {
        self.index.search(query, kind, k)
    }

    fn summary(&self, report_id: &str) -> Result<Option<ReportSummary>, StoreError> {
        let conn = self.conn.lock().expect("store connection poisoned");
        let row = conn
            .query_row(
                "SELECT question, created_at FROM reports WHERE report_id = ?1",
                params![report_id],
                |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)),
            )
            .optional()?;
        row.map(|(question, ts)| {
            Ok(ReportSummary {
                report_id: report_id.to_string(),
                question,
                created_at: parse_ts(&ts)?,
            })
        })
        .transpose()
    }

    async fn vector_hits(&self, query: &str, k: usize, embedder: &dyn TextEmbedder) -> Result<Vec<SearchHit>, String> {
        let q = embedder.embed(query).await.map_err(|e| e.to_string())?;
        let ranked = self
            .index
            .search(&q.vector, VectorKind::Report, k)
            .map_err(|e| e.to_string())?;
        let mut hits = Vec::with_capacity(ranked.len());
        for (key, score) in ranked {
            if let Some(s) = self.summary(&key).map_err(|e| e.to_string())? {
                hits.push(SearchHit {
                    report_id: s.report_id,
                    question: s.question,
                    score,
                    created_at: s.created_at,
                    match_kind: MatchKind::Vector,
                });
            }
        }
        Ok(hits)
    }

    /// Token-overlap ranking over stored questions.
    pub fn keyword_search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, StoreError> {
        let all = self.list_reports(i64::MAX as usize)?;
        let mut hits: Vec<SearchHit> = all
            .into_iter()
            .filter_map(|s| {
                let score = keyword_score(query, &s.question);
                (score > 0.0).then_some(SearchHit {
                    report_id: s.report_id,
                    question: s.question,
                    score,
                    created_at: s.created_at,
                    match_kind: MatchKind::Keyword,
                })
            })
            .collect();
        // list_reports is already newest-first; a stable sort keeps that for ties.
        hits.sort_by(|a, b| b.score.total_cmp(&a.score));
        hits.truncate(k);
        Ok(hits)
    }

    /// Semantic history search. Never fails: any problem on the vector path,
    /// or an empty vector result, routes to [`Self::keyword_search`].
    pub async fn search_reports(&self, query: &str, k: usize, embedder: &dyn TextEmbedder) -> Vec<SearchHit> {
        match self.vector_hits(query, k, embedder).await {
            Ok(hits) if !hits.is_empty() => return hits,
            Ok(_) => {}
            Err(e) => tracing::info!(error = %e, "vector search unavailable, using keyword fallback"),
        }
        self.keyword_search(query, k).unwrap_or_else(|e| {
            tracing::warn!(error = %e, "keyword search failed");
            Vec::new()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{assign_reference_labels, fixtures::paper, PaperExtraction, Synthesis};
    use crate::embeddings::{Embedder, FailingEmbedder};

    pub(crate) fn report(id: &str, question: &str, created: &str) -> Report {
        let papers = vec![paper("p1", "One"), paper("p2", "Two")];
        let extractions = papers
            .iter()
            .map(|p| PaperExtraction {
                paper_id: p.id.clone(),
                claims: vec![format!("claim about {}", p.title)],
                ..Default::default()
            })
            .collect();
        Report {
            report_id: id.into(),
            question: question.into(),
            references: assign_reference_labels(&papers).unwrap(),
            papers,
            extractions,
            synthesis: Synthesis::default(),
            draft_markdown: "Draft [R1].\n\n## References\n".into(),
            warnings: vec!["w2".into(), "w1".into()],
            created_at: created.parse().unwrap(),
        }
    }

    #[tokio::test]
    async fn round_trip_and_overwrite() {
        let store = ReportStore::open_in_memory().unwrap();
        let emb = Embedder::local_only();
        let r = report("01A", "What is RAG?", "2026-03-14T10:00:00Z");
        let out = store.save_report(&r, &emb).await.unwrap();
        assert!(out.warnings.is_empty());
        assert_eq!(store.get_report("01A").unwrap(), r);
        assert_eq!(store.get_report_payload("01A").unwrap(), canonical_json(&r));

        let mut v2 = r.clone();
        v2.draft_markdown = "second".into();
        store.save_report(&v2, &emb).await.unwrap();
        assert_eq!(store.get_report("01A").unwrap().draft_markdown, "second");
        assert_eq!(store.list_reports(10).unwrap().len(), 1);
        assert_eq!(store.vector_index().count(VectorKind::Report).unwrap(), 1);
        assert_eq!(store.vector_index().count(VectorKind::Paper).unwrap(), 2);
        assert_eq!(store.vector_index().count(VectorKind::Extraction).unwrap(), 2);
    }

    #[tokio::test]
    async fn missing_report() {
        let store = ReportStore::open_in_memory().unwrap();
        assert!(matches!(store.get_report("nonexistent"), Err(StoreError::NotFound(_))));
    }

    #[tokio::test]
    async fn invalid_report_is_rejected() {
        let store = ReportStore::open_in_memory().unwrap();
        let mut r = report("x", "q", "2026-03-14T10:00:00Z");
        r.extractions.pop();
        assert!(matches!(
            store.save_report(&r, &Embedder::local_only()).await,
            Err(StoreError::InvalidReport(_))
        ));
    }

    #[tokio::test]
    async fn list_is_newest_first() {
        let store = ReportStore::open_in_memory().unwrap();
        let emb = Embedder::local_only();
        assert!(store.list_reports(5).unwrap().is_empty());
        for (id, ts) in [
            ("a", "2026-01-01T00:00:00Z"),
            ("b", "2026-01-03T00:00:00Z"),
            ("c", "2026-01-02T00:00:00Z"),
        ] {
            store.save_report(&report(id, "q", ts), &emb).await.unwrap();
        }
        let ids: Vec<String> = store
            .list_reports(2)
            .unwrap()
            .into_iter()
            .map(|s| s.report_id)
            .collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(store.list_reports(100).unwrap().len(), 3);
    }

    #[tokio::test]
    async fn disabled_index_saves_with_warning_and_keyword_finds() {
        let store = ReportStore::open_in_memory().unwrap().without_vector_index();
        let emb = Embedder::local_only();
        let out = store
            .save_report(
                &report("k1", "graph neural networks for molecules", "2026-01-01T00:00:00Z"),
                &emb,
            )
            .await
            .unwrap();
        assert_eq!(out.warnings.len(), 1);
        let hits = store
            .search_reports("neural molecules property prediction", 5, &emb)
            .await;
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].match_kind, MatchKind::Keyword);
        assert_eq!(hits[0].score, 0.5);
    }

    #[tokio::test]
    async fn embedding_failure_is_a_warning() {
        let store = ReportStore::open_in_memory().unwrap();
        let out = store
            .save_report(&report("e1", "q", "2026-01-01T00:00:00Z"), &FailingEmbedder)
            .await
            .unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(store.get_report("e1").is_ok());
    }

    #[tokio::test]
    async fn self_query_scores_one() {
        let store = ReportStore::open_in_memory().unwrap();
        let emb = Embedder::local_only();
        let q = "retrieval augmented generation for question answering";
        store
            .save_report(&report("s1", q, "2026-01-01T00:00:00Z"), &emb)
            .await
            .unwrap();
        store
            .save_report(
                &report("s2", "diffusion models for time series", "2026-01-02T00:00:00Z"),
                &emb,
            )
            .await
            .unwrap();
        let hits = store.search_reports(q, 5, &emb).await;
        assert_eq!(hits[0].report_id, "s1");
        assert_eq!(hits[0].match_kind, MatchKind::Vector);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[tokio::test]
    async fn empty_store_search() {
        let store = ReportStore::open_in_memory().unwrap();
        assert!(store
            .search_reports("anything", 5, &Embedder::local_only())
            .await
            .is_empty());
    }

    #[test]
    fn keyword_score_examples() {
        assert_eq!(keyword_score("alpha beta gamma delta", "Alpha and BETA!"), 0.5);
        assert_eq!(keyword_score("", "x"), 0.0);
        assert_eq!(keyword_score("a a b", "a"), 0.5);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let json = canonical_json(&report("r", "q", "2026-01-01T00:00:00Z"));
        let first_keys: Vec<&str> = ["\"created_at\"", "\"draft_markdown\"", "\"extractions\"", "\"papers\""]
            .into_iter()
            .collect();
        let positions: Vec<usize> = first_keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(json.contains("\"created_at\":\"2026-01-01T00:00:00.000Z\""));
    }
}
