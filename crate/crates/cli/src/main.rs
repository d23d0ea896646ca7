//! `researchpilot`: run the literature-review pipeline headless, serve the
//! HTTP API, or browse saved reports.
//!
//! Exit codes: 0 success, 1 run or lookup failure, 2 configuration or
//! usage error.

mod console;

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use researchpilot::agents::{run_pipeline, validate_config, PipelineDeps};
use researchpilot::api::{self, AppState};
use researchpilot::config::{load_env_file, ConfigOverrides, Settings};
use researchpilot::domain::Secret;
use researchpilot::embeddings::{embed_local, Embedder};
use researchpilot::llm::LlmClient;
use researchpilot::search::ScholarSearch;
use researchpilot::store::{canonical_json, ReportStore, StoreError};

use console::ConsoleSink;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "researchpilot", version, about = "Literature-review assistant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for one question.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Browse saved reports.
    Reports(ReportsArgs),
    /// Print local embeddings, one JSON line per input line on stdin.
    Embed,
}

/// Mirrors the `RP_*` variables; a flag beats the environment.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// openai_compatible, anthropic or mock [env: RP_PROVIDER]
    #[arg(long)]
    provider: Option<String>,
    /// [env: RP_MODEL]
    #[arg(long)]
    model: Option<String>,
    /// [env: RP_API_KEY]
    #[arg(long)]
    api_key: Option<String>,
    /// Provider endpoint, e.g. https://api.groq.com/openai/v1 [env: RP_BASE_URL]
    #[arg(long)]
    base_url: Option<String>,
    /// remote, local or auto [env: RP_EMBEDDING_MODE]
    #[arg(long)]
    embedding_mode: Option<String>,
    /// SQLite database path [env: RP_DB_PATH]
    #[arg(long)]
    db: Option<PathBuf>,
    /// [env: RP_S2_API_KEY]
    #[arg(long)]
    s2_api_key: Option<String>,
    /// [env: RP_S2_BASE_URL]
    #[arg(long)]
    s2_base_url: Option<String>,
    /// [env: RP_ARXIV_BASE_URL]
    #[arg(long)]
    arxiv_base_url: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    question: String,
    /// Write the markdown draft here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report as canonical JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ServeArgs {
    /// [env: RP_PORT]
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReportsArgs {
    #[command(subcommand)]
    command: ReportsCommand,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand)]
enum ReportsCommand {
    /// Newest first.
    List {
        #[arg(long, default_value_t = api::DEFAULT_LIST_LIMIT)]
        limit: usize,
    },
    /// Semantic search over saved questions.
    Search {
        query: String,
        #[arg(short, long, default_value_t = api::DEFAULT_SEARCH_K)]
        k: usize,
    },
    /// Print one report as JSON.
    Show { report_id: String },
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn run(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: message.to_string(),
        }
    }
}

fn settings(args: &ConfigArgs) -> Result<Settings, Failure> {
    load_env_file(".env").map_err(Failure::config)?;
    let mut s = Settings::from_env().map_err(Failure::config)?;
    let overrides = ConfigOverrides {
        provider: args.provider.clone(),
        model: args.model.clone(),
        api_key: args.api_key.clone(),
        base_url: args.base_url.clone(),
        embedding_mode: args.embedding_mode.clone(),
    };
    s.runtime = overrides.apply(&s.runtime).map_err(Failure::config)?;
    let set = |v: &Option<String>| v.as_deref().map(str::trim).filter(|v| !v.is_empty()).map(String::from);
    if let Some(db) = &args.db {
        s.db_path = db.clone();
    }
    if let Some(k) = set(&args.s2_api_key) {
        s.s2_api_key = Some(Secret::new(k));
    }
    if let Some(u) = set(&args.s2_base_url) {
        s.s2_base_url = u;
    }
    if let Some(u) = set(&args.arxiv_base_url) {
        s.arxiv_base_url = u;
    }
    Ok(s)
}

fn open_store(settings: &Settings) -> Result<ReportStore, Failure> {
    ReportStore::open(&settings.db_path)
        .map_err(|e| Failure::run(format!("cannot open database {}: {e}", settings.db_path.display())))
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::run(format!("cannot write {}: {e}", path.display())))
}

async fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let settings = settings(&args.config)?;
    validate_config(&settings.runtime).map_err(Failure::config)?;
    let store = open_store(&settings)?;
    let deps = PipelineDeps {
        search: Arc::new(ScholarSearch::new(settings.search_endpoints())),
        llm: Arc::new(LlmClient::default()),
        store: Some(store),
        embedder: None,
    };
    let sink = ConsoleSink::new(settings.secrets());
    let report = run_pipeline(&args.question, &settings.runtime, &deps, &sink)
        .await
        .map_err(|_| Failure::run(""))?;

    if let Some(path) = &args.json {
        write_file(path, &canonical_json(&report))?;
    }
    match &args.out {
        Some(path) => write_file(path, &report.draft_markdown)?,
        None => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out);
            let _ = write!(out, "{}", report.draft_markdown);
        }
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

async fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let settings = settings(&args.config)?;
    let port = args.port.unwrap_or(settings.port);
    let store = open_store(&settings)?;
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), port))
        .await
        .map_err(|e| Failure::config(format!("cannot bind {}:{port}: {e}", args.host)))?;
    let addr = listener.local_addr().map_err(Failure::run)?;
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    api::serve(listener, AppState::from_settings(&settings, store), shutdown_signal())
        .await
        .map_err(Failure::run)
}

fn print_json_line<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

async fn cmd_reports(args: ReportsArgs) -> Result<(), Failure> {
    let settings = settings(&args.config)?;
    let store = open_store(&settings)?;
    match args.command {
        ReportsCommand::List { limit } => {
            for summary in store.list_reports(limit).map_err(Failure::run)? {
                print_json_line(&summary);
            }
        }
        ReportsCommand::Search { query, k } => {
            let embedder = Embedder::new(settings.runtime.clone());
            for hit in store.search_reports(&query, k, &embedder).await {
                print_json_line(&hit);
            }
        }
        ReportsCommand::Show { report_id } => match store.get_report_payload(&report_id) {
            Ok(payload) => println!("{payload}"),
            Err(StoreError::NotFound(id)) => return Err(Failure::run(format!("report not found: {id}"))),
            Err(e) => return Err(Failure::run(e)),
        },
    }
    Ok(())
}

fn cmd_embed() -> Result<(), Failure> {
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let text = line.map_err(Failure::run)?;
        let vector = embed_local(&text).vector;
        let json = serde_json::json!({ "text": text, "vector": vector });
        writeln!(out, "{json}").map_err(Failure::run)?;
    }
    Ok(())
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Run(args) => cmd_run(args).await,
            Command::Serve(args) => cmd_serve(args).await,
            Command::Reports(args) => cmd_reports(args).await,
            Command::Embed => cmd_embed(),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            // Pipeline failures were already reported as an error event.
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
