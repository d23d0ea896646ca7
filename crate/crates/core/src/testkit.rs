//! In-process fixtures for integration tests and benches: a local HTTP
//! server standing in for both scholarly sources, an OpenAI-compatible
//! model endpoint, and an embeddings endpoint, plus scripted collaborators
//! for driving the pipeline directly.
//!
//! Enabled with the `testkit` feature.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::domain::{
    assign_reference_labels, Paper, PaperExtraction, Provider, Report, RuntimeConfig, Secret, Source, Synthesis,
};
use crate::events::RunEmitter;
use crate::llm::{mock, CompletionBackend, CompletionRequest, LlmError};
use crate::search::{merge_and_dedup, SearchEndpoints, SearchError, SearchOutcome, SourceResult};

/// Behaviour of one scholarly source on the fixture server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceBehavior {
    Papers(usize),
    Status(u16),
}

/// Behaviour of the model endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelBehavior {
    /// Answers like the offline mock provider.
    Echo,
    /// HTTP 429 with a rate-limit body on the first extraction call.
    RateLimitFirstExtraction,
    /// HTTP 401 whose message quotes the bearer token back.
    RejectKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingBehavior {
    Dim(usize),
    Status(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureConfig {
    pub semantic_scholar: SourceBehavior,
    pub arxiv: SourceBehavior,
    pub model: ModelBehavior,
    pub embeddings: EmbeddingBehavior,
    /// The first `shared_dois` arXiv entries reuse Semantic Scholar DOIs.
    pub shared_dois: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            semantic_scholar: SourceBehavior::Papers(10),
            arxiv: SourceBehavior::Papers(10),
            model: ModelBehavior::Echo,
            embeddings: EmbeddingBehavior::Dim(1536),
            shared_dois: 0,
        }
    }
}

#[derive(Default)]
struct Recorded {
    signatures: Vec<String>,
    authorization: Vec<String>,
}

struct FixtureState {
    config: FixtureConfig,
    recorded: Mutex<Recorded>,
}

/// A running fixture server. Aborted on drop.
pub struct FixtureServer {
    pub base_url: String,
    state: Arc<FixtureState>,
    handle: JoinHandle<()>,
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

impl FixtureServer {
    pub async fn start(config: FixtureConfig) -> Self {
        let state = Arc::new(FixtureState {
            config,
            recorded: Mutex::new(Recorded::default()),
        });
        let app = Router::new()
            .route("/graph/v1/paper/search", get(s2_search))
            .route("/api/query", get(arxiv_query))
            .route("/v1/chat/completions", post(chat_completions))
            .route("/v1/embeddings", post(embeddings))
            .with_state(state.clone());
        let listener = TcpListener::bind("127.0.0.1:0").await.expect("bind fixture server");
        let addr = listener.local_addr().expect("fixture address");
        let handle = tokio::spawn(async move {
            axum::serve(listener, app).await.expect("fixture server");
        });
        FixtureServer {
            base_url: format!("http://{addr}"),
            state,
            handle,
        }
    }

    /// Base URL for an OpenAI-compatible provider (`.../v1`).
    pub fn provider_base_url(&self) -> String {
        format!("{}/v1", self.base_url)
    }

    pub fn search_endpoints(&self) -> SearchEndpoints {
        SearchEndpoints {
            s2_base_url: self.base_url.clone(),
            arxiv_base_url: self.base_url.clone(),
            ..SearchEndpoints::default()
        }
    }

    /// Runtime config that routes model calls here.
    pub fn provider_config(&self, api_key: &str) -> RuntimeConfig {
        RuntimeConfig {
            provider: Provider::OpenAiCompatible,
            model: "fixture-model".into(),
            api_key: Some(Secret::new(api_key)),
            base_url: Some(self.provider_base_url()),
            ..RuntimeConfig::default()
        }
    }

    /// Signature names of every model call received, in order.
    pub fn model_calls(&self) -> Vec<String> {
        self.state.recorded.lock().unwrap().signatures.clone()
    }

    /// `Authorization` header values received by the model endpoint.
    pub fn authorization_headers(&self) -> Vec<String> {
        self.state.recorded.lock().unwrap().authorization.clone()
    }
}

pub fn s2_entry(i: usize) -> Value {
    json!({
        "paperId": format!("s2-{i:02}"),
        "title": format!("Retrieval augmented generation study {i}"),
        "abstract": format!("We evaluate retrieval augmented generation setup {i} on open-domain question answering."),
        "url": format!("https://www.semanticscholar.org/paper/s2-{i:02}"),
        "year": 2020 + (i % 5) as i32,
        "authors": [{ "name": format!("Author S{i}") }, { "name": "Shared Coauthor" }],
        "externalIds": { "DOI": format!("10.1000/rag.{i}") },
    })
}

pub fn arxiv_entry(i: usize, doi: Option<&str>) -> String {
    let doi = doi.map(|d| format!("<arxiv:doi>{d}</arxiv:doi>")).unwrap_or_default();
    format!(
        "<entry>\
           <id>http://arxiv.org/abs/2401.{i:05}v1</id>\
           <published>2024-01-{day:02}T00:00:00Z</published>\
           <title>Dense passage retrieval variant {i}</title>\
           <summary>\n  A dense retriever variant {i} improves recall\n  on multi-hop benchmarks.\n</summary>\
           <author><name>Author A{i}</name></author>\
           <link href=\"http://arxiv.org/abs/2401.{i:05}v1\" rel=\"alternate\" type=\"text/html\"/>\
           {doi}\
         </entry>",
        day = 1 + i % 28
    )
}

pub fn arxiv_feed(n: usize, shared_dois: usize) -> String {
    let entries: String = (0..n)
        .map(|i| {
            let doi = (i < shared_dois).then(|| format!("10.1000/RAG.{i}"));
            arxiv_entry(i, doi.as_deref())
        })
        .collect();
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\
         <feed xmlns=\"http://www.w3.org/2005/Atom\" xmlns:arxiv=\"http://arxiv.org/schemas/atom\">\
         <title>arXiv Query</title>{entries}</feed>"
    )
}

fn limit_param(q: &BTreeMap<String, String>, name: &str) -> usize {
    q.get(name).and_then(|v| v.parse().ok()).unwrap_or(usize::MAX)
}

async fn s2_search(State(st): State<Arc<FixtureState>>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    match st.config.semantic_scholar {
        SourceBehavior::Status(code) => status_body(code, json!({ "message": "Too Many Requests" })),
        SourceBehavior::Papers(n) => {
            let data: Vec<Value> = (0..n.min(limit_param(&q, "limit"))).map(s2_entry).collect();
            Json(json!({ "total": n, "offset": 0, "data": data })).into_response()
        }
    }
}

async fn arxiv_query(State(st): State<Arc<FixtureState>>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    match st.config.arxiv {
        SourceBehavior::Status(code) => status_body(code, json!({ "message": "unavailable" })),
        SourceBehavior::Papers(n) => (
            [("content-type", "application/atom+xml")],
            arxiv_feed(n.min(limit_param(&q, "max_results")), st.config.shared_dois),
        )
            .into_response(),
    }
}

fn status_body(code: u16, body: Value) -> Response {
    (
        StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
        Json(body),
    )
        .into_response()
}

fn message_text(messages: &[Value], role: &str) -> String {
    messages
        .iter()
        .filter(|m| m["role"] == role)
        .filter_map(|m| m["content"].as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

async fn chat_completions(
    State(st): State<Arc<FixtureState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let req = CompletionRequest {
        system_text: message_text(&messages, "system"),
        user_text: message_text(&messages, "user"),
        model: body["model"].as_str().unwrap_or_default().to_string(),
        max_tokens: body["max_tokens"].as_u64().unwrap_or(0) as u32,
        temperature: body["temperature"].as_f64().unwrap_or(0.0) as f32,
    };
    let signature = req
        .system_text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("signature: "))
        .unwrap_or("")
        .to_string();
    let first_extraction = {
        let mut rec = st.recorded.lock().unwrap();
        if let Some(auth) = headers.get("authorization").and_then(|v| v.to_str().ok()) {
            rec.authorization.push(auth.to_string());
        }
        let first = signature == "extraction" && !rec.signatures.iter().any(|s| s == "extraction");
        rec.signatures.push(signature);
        first
    };
    if st.config.model == ModelBehavior::RejectKey {
        let token = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .unwrap_or_default();
        return status_body(
            401,
            json!({ "error": { "message": format!("Incorrect API key provided: {token}"), "type": "invalid_request_error" } }),
        );
    }
    if st.config.model == ModelBehavior::RateLimitFirstExtraction && first_extraction {
        return status_body(
            429,
            json!({ "error": { "message": "Rate limit reached for tokens per minute", "type": "tokens" } }),
        );
    }
    Json(json!({
        "id": "chatcmpl-fixture",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": mock::respond(&req) },
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}

async fn embeddings(State(st): State<Arc<FixtureState>>, Json(body): Json<Value>) -> Response {
    match st.config.embeddings {
        EmbeddingBehavior::Status(code) => status_body(code, json!({ "error": { "message": "embedding failure" } })),
        EmbeddingBehavior::Dim(dim) => {
            let text = match &body["input"] {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let local = crate::embeddings::embed_local(&text).vector;
            let vector: Vec<f32> = (0..dim).map(|i| local[i % local.len()] + 0.01).collect();
            Json(json!({ "object": "list", "data": [{ "index": 0, "embedding": vector }] })).into_response()
        }
    }
}

/// Deterministic paper for scripted runs.
pub fn sample_paper(i: usize) -> Paper {
    let source = if i.is_multiple_of(2) {
        Source::SemanticScholar
    } else {
        Source::Arxiv
    };
    Paper {
        id: format!("paper-{i}"),
        title: format!("Sample study number {i} on retrieval"),
        abstract_text: format!("Sample abstract {i}: a retrieval method evaluated on benchmark {i}."),
        source,
        url: format!("https://example.org/paper-{i}"),
        year: Some(2018 + (i % 7) as i32),
        authors: vec![format!("Author {i}")],
        doi: Some(format!("10.5555/sample.{i}")),
    }
}

/// Search stage stand-in: either returns `papers` (through the real merge)
/// or fails both sources.
#[derive(Debug, Clone)]
pub struct ScriptedSearch {
    pub papers: Vec<Paper>,
    pub fail: bool,
}

impl ScriptedSearch {
    pub fn with_papers(papers: Vec<Paper>) -> Self {
        ScriptedSearch { papers, fail: false }
    }

    pub fn failing() -> Self {
        ScriptedSearch {
            papers: Vec::new(),
            fail: true,
        }
    }
}

#[async_trait]
impl crate::search::PaperSearch for ScriptedSearch {
    async fn search(&self, _question: &str, emitter: &RunEmitter<'_>) -> Result<SearchOutcome, SearchError> {
        let results = if self.fail {
            vec![
                SourceResult::failed(
                    Source::SemanticScholar,
                    "semantic_scholar: HTTP 503 Service Unavailable",
                ),
                SourceResult::failed(Source::Arxiv, "arxiv: request timed out after 15s"),
            ]
        } else {
            let (s2, ax): (Vec<Paper>, Vec<Paper>) = self
                .papers
                .iter()
                .cloned()
                .partition(|p| p.source == Source::SemanticScholar);
            vec![
                SourceResult::ok(Source::SemanticScholar, s2),
                SourceResult::ok(Source::Arxiv, ax),
            ]
        };
        for r in &results {
            emitter.progress(
                crate::domain::Agent::Search,
                json!({ "source": r.source, "paper_count": r.papers.len(), "failure": r.failure }),
            );
        }
        merge_and_dedup(&results, crate::domain::MAX_PAPERS)
    }
}

/// Mock-provider backend that fails the `nth` (0-based) call whose
/// signature is `fail_signature`.
#[derive(Debug, Clone, Default)]
pub struct FaultyBackend {
    pub fail_signature: Option<String>,
    pub nth: usize,
    seen: Arc<Mutex<BTreeMap<String, usize>>>,
}

impl FaultyBackend {
    pub fn healthy() -> Self {
        Self::default()
    }

    pub fn failing(signature: &str, nth: usize) -> Self {
        FaultyBackend {
            fail_signature: Some(signature.to_string()),
            nth,
            ..Self::default()
        }
    }
}

#[async_trait]
impl CompletionBackend for FaultyBackend {
    async fn complete(&self, req: &CompletionRequest, _config: &RuntimeConfig) -> Result<String, LlmError> {
        let name = req
            .system_text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("signature: "))
            .unwrap_or("")
            .to_string();
        let count = {
            let mut seen = self.seen.lock().unwrap();
            let c = seen.entry(name.clone()).or_default();
            *c += 1;
            *c - 1
        };
        if self.fail_signature.as_deref() == Some(name.as_str()) && count == self.nth {
            return Err(LlmError::RateLimited {
                message: "injected rate limit".into(),
            });
        }
        Ok(mock::respond(req))
    }
}

/// Fixed, fully populated report used for round-trip checks.
pub fn golden_report() -> Report {
    let mut papers = vec![sample_paper(0), sample_paper(1), sample_paper(2)];
    papers[1].doi = None;
    papers[1].year = None;
    papers[2].title = "Ünïcode “quoted” title, naïve café".into();
    papers[2].authors = vec!["Zoë Ørsted".into(), "李 雷".into()];
    let extractions = papers
        .iter()
        .map(|p| PaperExtraction {
            paper_id: p.id.clone(),
            claims: vec![format!("{} claims \"x\" \\ y", p.id)],
            methods: vec!["dense retrieval".into(), "BM25".into()],
            datasets: vec!["NQ".into()],
            results: vec![],
            limitations: vec!["small scale\nsecond line".into()],
        })
        .collect();
    Report {
        report_id: "01J0000000000000000000GOLD".into(),
        question: "How does retrieval augmentation affect factuality?".into(),
        references: assign_reference_labels(&papers).expect("unique ids"),
        papers,
        extractions,
        synthesis: Synthesis {
            consensus: vec!["Retrieval helps [R1].".into()],
            contradictions: vec!["Gains vary [R2] vs [R3].".into()],
            open_gaps: vec![],
        },
        draft_markdown: "Retrieval helps [R1].\n\n## References\n\n- [R1] Author 0 (2018). Sample.\n".into(),
        warnings: vec!["search warning: semantic_scholar: HTTP 429 Too Many Requests".into()],
        created_at: "2024-05-06T07:08:09.123Z".parse().expect("timestamp"),
    }
}

/// Checks an event trace against
/// `queued (started progress* completed){0..4} (done | error)`: dense `seq`
/// from 0, stages in fixed order, a `done` only after all four stages, and
/// an `error` whose stage names the last started agent (or `setup`).
pub fn check_trace(events: &[crate::domain::PipelineEvent]) -> Result<(), String> {
    use crate::domain::{Agent, EventType};

    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(format!("event {i} has seq {}", e.seq));
        }
    }
    let mut it = events.iter().peekable();
    match it.next() {
        Some(e) if e.kind == EventType::Queued && e.agent.is_none() => {}
        other => return Err(format!("trace must start with queued, got {other:?}")),
    }
    let mut stages = 0usize;
    loop {
        let Some(e) = it.next() else {
            return Err("trace has no terminal event".into());
        };
        match e.kind {
            EventType::AgentStarted => {
                let expected = Agent::ALL.get(stages).copied();
                if e.agent != expected {
                    return Err(format!("stage {stages} started {:?}, expected {expected:?}", e.agent));
                }
                loop {
                    match it.next() {
                        Some(p) if p.kind == EventType::AgentProgress && p.agent == expected => {}
                        Some(c) if c.kind == EventType::AgentCompleted && c.agent == expected => break,
                        other => return Err(format!("inside {expected:?}: unexpected {other:?}")),
                    }
                }
                stages += 1;
            }
            EventType::Done => {
                if stages != Agent::ALL.len() {
                    return Err(format!("done after {stages} stages"));
                }
                if e.data["report_id"].as_str().is_none_or(str::is_empty) {
                    return Err("done without report_id".into());
                }
                break;
            }
            EventType::Error => {
                let stage = e.data["stage"].as_str().unwrap_or_default();
                let expected = match stages {
                    0 => "setup",
                    n => Agent::ALL[n - 1].as_str(),
                };
                if stages > 0 && events[e.seq as usize - 1].data["status"] != "failed" {
                    return Err("error not preceded by a failed completion".into());
                }
                if stage != expected {
                    return Err(format!("error stage {stage:?} after {stages} stages"));
                }
                break;
            }
            other => return Err(format!("unexpected {other:?} between stages")),
        }
    }
    match it.next() {
        None => Ok(()),
        Some(e) => Err(format!("event after terminal: {e:?}")),
    }
}
