mod common;

use std::time::{Duration, Instant};

use common::{cli, events, interrupt, run_cmd, serve, stderr, stdout};
use researchpilot::embeddings::Embedder;
use researchpilot::store::{ReportStore, SearchHit};
use researchpilot::testkit::{check_trace, FixtureConfig, FixtureServer, SourceBehavior};
use researchpilot::{EventType, Report};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_writes_draft_json_and_events() {
    let fx = FixtureServer::start(FixtureConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let out = run_cmd(dir.path(), &fx, "What is RAG?")
        .args(["--provider", "mock", "--json"])
        .arg(&json)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let text = stdout(&out);
    assert!(text.starts_with("queued: What is RAG?\n[search] started\n"));
    assert!(text.contains("[extraction] 10/10"));
    assert!(text.contains("## References"));

    let evs = events(&out);
    check_trace(&evs).unwrap();
    let report: Report = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    report.validate().unwrap();
    assert_eq!(evs.last().unwrap().data["report_id"], report.report_id.as_str());
    assert!(text.ends_with(&report.draft_markdown));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn out_flag_moves_the_draft_to_a_file() {
    let fx = FixtureServer::start(FixtureConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let md = dir.path().join("draft.md");
    let out = run_cmd(dir.path(), &fx, "dense retrieval")
        .arg("--out")
        .arg(&md)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let draft = std::fs::read_to_string(&md).unwrap();
    assert!(draft.contains("## References"));
    assert!(!stdout(&out).contains("## References"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn exit_codes() {
    let fx = FixtureServer::start(FixtureConfig {
        semantic_scholar: SourceBehavior::Status(500),
        arxiv: SourceBehavior::Status(500),
        ..FixtureConfig::default()
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let failed = run_cmd(d, &fx, "q").output().unwrap();
    assert_eq!(failed.status.code(), Some(1));
    let evs = events(&failed);
    check_trace(&evs).unwrap();
    assert_eq!(evs.last().unwrap().kind, EventType::Error);
    assert!(stderr(&failed).lines().all(|l| l.starts_with('{')));

    let code = |args: &[&str]| cli(d).args(args).output().unwrap().status.code();
    assert_eq!(code(&["run", "q", "--provider", "openai_compatible"]), Some(2));
    assert_eq!(code(&["run", "q", "--provider", "anthropic", "--model", "m"]), Some(2));
    assert_eq!(code(&["run", "q", "--provider", "groq"]), Some(2));
    assert_eq!(code(&["run", "q", "--embedding-mode", "neural"]), Some(2));
    assert_eq!(code(&["run"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["reports", "show", "missing"]), Some(1));
    assert_eq!(code(&["--version"]), Some(0));

    let bad_port = cli(d).env("RP_PORT", "eighty").args(["serve"]).output().unwrap();
    assert_eq!(bad_port.status.code(), Some(2));
    assert!(stderr(&bad_port).contains("RP_PORT"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn precedence_is_flag_then_env_then_env_file() {
    let fx = FixtureServer::start(FixtureConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join(".env"), "RP_PROVIDER=openai_compatible\nRP_MODEL=from-file\n").unwrap();

    // .env alone: non-mock provider without a key.
    assert_eq!(run_cmd(d, &fx, "q").output().unwrap().status.code(), Some(2));
    // Environment beats .env.
    let env = run_cmd(d, &fx, "q").env("RP_PROVIDER", "mock").output().unwrap();
    assert_eq!(env.status.code(), Some(0), "{}", stderr(&env));
    // Flag beats environment.
    let flag = run_cmd(d, &fx, "q")
        .env("RP_PROVIDER", "anthropic")
        .args(["--provider", "mock"])
        .output()
        .unwrap();
    assert_eq!(flag.status.code(), Some(0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reports_subcommands() {
    let fx = FixtureServer::start(FixtureConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let db = d.join("reports.db");
    let reports = |args: &[&str]| cli(d).arg("reports").arg("--db").arg(&db).args(args).output().unwrap();

    let empty = reports(&["list"]);
    assert_eq!(empty.status.code(), Some(0));
    assert!(stdout(&empty).is_empty());

    let mut ids = Vec::new();
    for q in [
        "retrieval for question answering",
        "protein folding",
        "retrieval evaluation",
    ] {
        let json = d.join("r.json");
        let out = run_cmd(d, &fx, q).arg("--json").arg(&json).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = std::fs::read_to_string(&json).unwrap();
        ids.push((serde_json::from_str::<Report>(&text).unwrap().report_id, text));
    }

    let list = stdout(&reports(&["list"]));
    let listed: Vec<String> = list
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["report_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(listed, ids.iter().rev().map(|(id, _)| id.clone()).collect::<Vec<_>>());
    assert_eq!(stdout(&reports(&["list", "--limit", "1"])).lines().count(), 1);

    let (id, payload) = &ids[0];
    let shown = reports(&["show", id]);
    assert_eq!(stdout(&shown).trim_end(), payload);

    let found = reports(&["search", "retrieval", "-k", "3"]);
    let hits: Vec<SearchHit> = stdout(&found)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    let direct = ReportStore::open(&db)
        .unwrap()
        .search_reports("retrieval", 3, &Embedder::local_only())
        .await;
    assert_eq!(hits, direct);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_liveness_conflict_and_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cmd = cli(d);
    cmd.args(["serve", "--port", "0", "--db"]).arg(d.join("reports.db"));
    let mut served = serve(cmd);

    let resp = reqwest::get(format!("{}/config", served.base)).await.unwrap();
    assert_eq!(resp.status(), 200);
    let port = served.base.rsplit(':').next().unwrap().to_string();

    let clash = cli(d).args(["serve", "--port", &port]).output().unwrap();
    assert_eq!(clash.status.code(), Some(2));
    assert!(stderr(&clash).contains("cannot bind"));

    interrupt(&served.child);
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if let Some(status) = served.child.try_wait().unwrap() {
            assert!(status.success(), "{status:?}");
            break;
        }
        assert!(Instant::now() < deadline, "serve did not stop on SIGINT");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn interrupt_lets_in_flight_streams_finish() {
    let fx = FixtureServer::start(FixtureConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cmd = cli(d);
    cmd.args(["serve", "--port", "0", "--db"])
        .arg(d.join("reports.db"))
        .args(["--s2-base-url", &fx.base_url, "--arxiv-base-url", &fx.base_url]);
    let served = serve(cmd);

    let mut resp = reqwest::Client::new()
        .post(format!("{}/research", served.base))
        .json(&serde_json::json!({ "question": "in flight" }))
        .send()
        .await
        .unwrap();
    let mut body = String::from_utf8(resp.chunk().await.unwrap().unwrap().to_vec()).unwrap();
    interrupt(&served.child);
    // Either the stream reaches its terminal event or the connection closes.
    while let Ok(Some(chunk)) = resp.chunk().await {
        body.push_str(&String::from_utf8_lossy(&chunk));
    }
    let evs: Vec<researchpilot::PipelineEvent> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    if evs.last().is_some_and(|e| e.kind.is_terminal()) {
        check_trace(&evs).unwrap();
    }
}
