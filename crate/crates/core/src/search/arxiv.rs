use super::{describe_transport_error, SourceResult, SOURCE_TIMEOUT};
use crate::domain::{Paper, Source};

const ATOM_NS: &str = "http://www.w3.org/2005/Atom";
const ARXIV_NS: &str = "http://arxiv.org/schemas/atom";

fn squash(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, ns: &str, name: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name((ns, name)))
        .and_then(|c| c.text())
}

/// Parses an arXiv Atom feed into papers. Entries with an empty summary are
/// dropped before `limit` applies.
pub fn parse_atom_feed(xml: &str, limit: usize) -> Result<Vec<Paper>, roxmltree::Error> {
    let doc = roxmltree::Document::parse(xml)?;
    let papers = doc
        .root_element()
        .children()
        .filter(|n| n.has_tag_name((ATOM_NS, "entry")))
        .filter_map(|entry| {
            let id_url = child_text(entry, ATOM_NS, "id")?.trim().to_string();
            let abstract_text = squash(child_text(entry, ATOM_NS, "summary").unwrap_or(""));
            if abstract_text.is_empty() || id_url.is_empty() {
                return None;
            }
            let id = id_url
                .rsplit_once("/abs/")
                .map(|(_, tail)| tail.to_string())
                .unwrap_or_else(|| id_url.clone());
            let year = child_text(entry, ATOM_NS, "published")
                .and_then(|p| p.trim().get(..4))
                .and_then(|y| y.parse().ok());
            let authors = entry
                .children()
                .filter(|c| c.has_tag_name((ATOM_NS, "author")))
                .filter_map(|a| child_text(a, ATOM_NS, "name"))
                .map(squash)
                .collect();
            let url = entry
                .children()
                .find(|c| c.has_tag_name((ATOM_NS, "link")) && c.attribute("rel").unwrap_or("alternate") == "alternate")
                .and_then(|l| l.attribute("href"))
                .map(str::to_string)
                .unwrap_or(id_url);
            let doi = child_text(entry, ARXIV_NS, "doi").map(|d| d.trim().to_string());
            Some(Paper {
                id,
                title: squash(child_text(entry, ATOM_NS, "title").unwrap_or("")),
                abstract_text,
                source: Source::Arxiv,
                url,
                year,
                authors,
                doi,
            })
        })
        .take(limit)
        .collect();
    Ok(papers)
}

pub(super) async fn query(http: &reqwest::Client, base_url: &str, question: &str, limit: usize) -> SourceResult {
    let source = Source::Arxiv;
    let url = format!("{}/api/query", base_url.trim_end_matches('/'));
    let search_query = format!("all:{question}");
    let req = http.get(&url).query(&[
        ("search_query", search_query.as_str()),
        ("start", "0"),
        ("max_results", &limit.to_string()),
        ("sortBy", "relevance"),
    ]);

    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => return SourceResult::failed(source, describe_transport_error(source, e, SOURCE_TIMEOUT)),
    };
    let status = resp.status();
    if !status.is_success() {
        tracing::warn!(%status, "arxiv search failed");
        return SourceResult::failed(source, format!("{source}: HTTP {status}"));
    }
    let body = match resp.text().await {
        Ok(b) => b,
        Err(e) => return SourceResult::failed(source, describe_transport_error(source, e, SOURCE_TIMEOUT)),
    };
    match parse_atom_feed(&body, limit) {
        Ok(papers) => SourceResult::ok(source, papers),
        Err(_) => SourceResult::failed(source, "arxiv: parse error"),
    }
}
