use serde::Deserialize;

use super::{describe_transport_error, SourceResult, SOURCE_TIMEOUT};
use crate::domain::{Paper, Secret, Source};

const FIELDS: &str = "title,abstract,url,year,authors,externalIds";

#[derive(Debug, Deserialize)]
struct Author {
    name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Entry {
    paper_id: Option<String>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    url: Option<String>,
    year: Option<i32>,
    #[serde(default)]
    authors: Vec<Author>,
    external_ids: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Deserialize)]
struct SearchResponse {
    #[serde(default)]
    data: Vec<Entry>,
}

/// Maps a paper-search response body to papers, dropping entries without an
/// id or abstract before applying `limit`.
pub fn parse_search_response(body: &str, limit: usize) -> Result<Vec<Paper>, serde_json::Error> {
    let parsed: SearchResponse = serde_json::from_str(body)?;
    Ok(parsed
        .data
        .into_iter()
        .filter_map(|e| {
            let id = e.paper_id.filter(|s| !s.is_empty())?;
            let abstract_text = e
                .abstract_text
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())?;
            let doi = e
                .external_ids
                .as_ref()
                .and_then(|ids| ids.get("DOI"))
                .and_then(|v| v.as_str())
                .map(str::to_string);
            Some(Paper {
                url: e
                    .url
                    .filter(|u| !u.is_empty())
                    .unwrap_or_else(|| format!("https://www.semanticscholar.org/paper/{id}")),
                id,
                title: e.title.unwrap_or_default().trim().to_string(),
                abstract_text,
                source: Source::SemanticScholar,
                year: e.year,
                authors: e.authors.into_iter().filter_map(|a| a.name).collect(),
                doi,
            })
        })
        .take(limit)
        .collect())
}

pub(super) async fn query(
    http: &reqwest::Client,
    base_url: &str,
    question: &str,
    limit: usize,
    api_key: Option<&Secret>,
) -> SourceResult {
    let source = Source::SemanticScholar;
    let url = format!("{}/graph/v1/paper/search", base_url.trim_end_matches('/'));
    let mut req = http
        .get(&url)
        .query(&[("query", question), ("limit", &limit.to_string()), ("fields", FIELDS)]);
    if let Some(key) = api_key {
        req = req.header("x-api-key", key.expose());
    }

    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => return SourceResult::failed(source, describe_transport_error(source, e, SOURCE_TIMEOUT)),
    };
    let status = resp.status();
    if !status.is_success() {
        tracing::warn!(%status, "semantic scholar search failed");
        return SourceResult::failed(source, format!("{source}: HTTP {status}"));
    }
    let body = match resp.text().await {
        Ok(b) => b,
        Err(e) => return SourceResult::failed(source, describe_transport_error(source, e, SOURCE_TIMEOUT)),
    };
    match parse_search_response(&body, limit) {
        Ok(papers) => SourceResult::ok(source, papers),
        Err(_) => SourceResult::failed(source, format!("{source}: parse error")),
    }
}
