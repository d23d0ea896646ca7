//! Scholarly retrieval: query Semantic Scholar and arXiv concurrently, then
//! merge, deduplicate, and cap the combined list.

mod arxiv;
mod semantic_scholar;

use std::collections::HashSet;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::json;
use thiserror::Error;

use crate::domain::{normalize_title, Agent, Paper, Secret, Source, MAX_PAPERS};
use crate::events::RunEmitter;

pub use arxiv::parse_atom_feed;
pub use semantic_scholar::parse_search_response;

pub const DEFAULT_S2_BASE_URL: &str = "https://api.semanticscholar.org";
pub const DEFAULT_ARXIV_BASE_URL: &str = "https://export.arxiv.org";
pub const PER_SOURCE_LIMIT: usize = 10;
pub const SOURCE_TIMEOUT: Duration = Duration::from_secs(15);

/// What one source returned. A present `failure` implies empty `papers`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceResult {
    pub source: Source,
    pub papers: Vec<Paper>,
    pub failure: Option<String>,
}

impl SourceResult {
    pub fn ok(source: Source, papers: Vec<Paper>) -> Self {
        SourceResult {
            source,
            papers,
            failure: None,
        }
    }

    pub fn failed(source: Source, failure: impl Into<String>) -> Self {
        SourceResult {
            source,
            papers: Vec::new(),
            failure: Some(failure.into()),
        }
    }

    /// Failure text prefixed with the source name (once).
    fn warning(&self) -> Option<String> {
        let failure = self.failure.as_deref()?;
        let prefix = format!("{}:", self.source);
        Some(if failure.starts_with(&prefix) {
            format!("search warning: {failure}")
        } else {
            format!("search warning: {prefix} {failure}")
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchOutcome {
    pub papers: Vec<Paper>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("no papers retrieved{}", if warnings.is_empty() { String::new() } else { format!(" ({})", warnings.join("; ")) })]
    NoPapers { warnings: Vec<String> },
}

fn lower_doi(p: &Paper) -> Option<String> {
    p.doi
        .as_deref()
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .map(str::to_lowercase)
}

/// Interleaves successful sources round-robin (Semantic Scholar first),
/// keeps the first of every duplicate group, and truncates to `cap`.
///
/// Two papers are duplicates when they share a DOI (case-insensitive) or,
/// if either lacks a DOI, when their normalized titles are equal. A merge
/// that ends up empty is an error carrying the per-source warnings.
pub fn merge_and_dedup(results: &[SourceResult], cap: usize) -> Result<SearchOutcome, SearchError> {
    let mut ordered: Vec<&SourceResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.source);

    let warnings: Vec<String> = ordered.iter().filter_map(|r| r.warning()).collect();
    let lists: Vec<&[Paper]> = ordered
        .iter()
        .filter(|r| r.failure.is_none())
        .map(|r| r.papers.as_slice())
        .collect();

    let longest = lists.iter().map(|l| l.len()).max().unwrap_or(0);
    let interleaved = (0..longest).flat_map(|i| lists.iter().filter_map(move |l| l.get(i)));

    let mut kept: Vec<Paper> = Vec::new();
    let mut dois: HashSet<String> = HashSet::new();
    let mut titles_all: HashSet<String> = HashSet::new();
    let mut titles_without_doi: HashSet<String> = HashSet::new();
    for paper in interleaved {
        if kept.len() == cap {
            break;
        }
        if paper.abstract_text.trim().is_empty() {
            continue;
        }
        let doi = lower_doi(paper);
        let title = normalize_title(&paper.title);
        let duplicate = match &doi {
            Some(d) => dois.contains(d) || titles_without_doi.contains(&title),
            None => titles_all.contains(&title),
        };
        if duplicate {
            continue;
        }
        match doi {
            Some(d) => {
                dois.insert(d);
            }
            None => {
                titles_without_doi.insert(title.clone());
            }
        }
        titles_all.insert(title);
        kept.push(paper.clone());
    }

    if kept.is_empty() {
        return Err(SearchError::NoPapers { warnings });
    }
    Ok(SearchOutcome { papers: kept, warnings })
}

/// Retrieval stage as seen by the pipeline.
#[async_trait]
pub trait PaperSearch: Send + Sync {
    async fn search(&self, question: &str, emitter: &RunEmitter<'_>) -> Result<SearchOutcome, SearchError>;
}

/// Endpoint settings for [`ScholarSearch`].
#[derive(Debug, Clone)]
pub struct SearchEndpoints {
    pub s2_base_url: String,
    pub arxiv_base_url: String,
    pub s2_api_key: Option<Secret>,
    pub per_source_limit: usize,
    pub timeout: Duration,
}

impl Default for SearchEndpoints {
    fn default() -> Self {
        SearchEndpoints {
            s2_base_url: DEFAULT_S2_BASE_URL.to_string(),
            arxiv_base_url: DEFAULT_ARXIV_BASE_URL.to_string(),
            s2_api_key: None,
            per_source_limit: PER_SOURCE_LIMIT,
            timeout: SOURCE_TIMEOUT,
        }
    }
}

/// Live Semantic Scholar + arXiv retrieval.
#[derive(Debug, Clone)]
pub struct ScholarSearch {
    endpoints: SearchEndpoints,
    http: reqwest::Client,
}

impl ScholarSearch {
    pub fn new(endpoints: SearchEndpoints) -> Self {
        let http = reqwest::Client::builder()
            .timeout(endpoints.timeout)
            .user_agent(concat!("researchpilot/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("reqwest client with static config");
        ScholarSearch { endpoints, http }
    }

    pub fn endpoints(&self) -> &SearchEndpoints {
        &self.endpoints
    }

    pub async fn query_semantic_scholar(&self, question: &str, limit: usize) -> SourceResult {
        semantic_scholar::query(
            &self.http,
            &self.endpoints.s2_base_url,
            question,
            limit,
            self.endpoints.s2_api_key.as_ref(),
        )
        .await
    }

    pub async fn query_arxiv(&self, question: &str, limit: usize) -> SourceResult {
        arxiv::query(&self.http, &self.endpoints.arxiv_base_url, question, limit).await
    }
}

fn report_source(emitter: &RunEmitter<'_>, result: &SourceResult) {
    emitter.progress(
        Agent::Search,
        json!({
            "source": result.source,
            "paper_count": result.papers.len(),
            "failure": result.failure,
        }),
    );
}

#[async_trait]
impl PaperSearch for ScholarSearch {
    async fn search(&self, question: &str, emitter: &RunEmitter<'_>) -> Result<SearchOutcome, SearchError> {
        let limit = self.endpoints.per_source_limit;
        let s2 = async {
            let r = self.query_semantic_scholar(question, limit).await;
            report_source(emitter, &r);
            r
        };
        let ax = async {
            let r = self.query_arxiv(question, limit).await;
            report_source(emitter, &r);
            r
        };
        let (s2, ax) = tokio::join!(s2, ax);
        merge_and_dedup(&[s2, ax], MAX_PAPERS)
    }
}

/// Describes a transport-level failure without leaking the request URL.
pub(crate) fn describe_transport_error(source: Source, err: reqwest::Error, timeout: Duration) -> String {
    if err.is_timeout() {
        format!("{source}: request timed out after {}s", timeout.as_secs())
    } else {
        format!("{source}: request failed: {}", err.without_url())
    }
}
