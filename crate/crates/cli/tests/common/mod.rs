#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use researchpilot::testkit::FixtureServer;
use researchpilot::PipelineEvent;

const RP_VARS: [&str; 10] = [
    "RP_PROVIDER",
    "RP_MODEL",
    "RP_API_KEY",
    "RP_BASE_URL",
    "RP_EMBEDDING_MODE",
    "RP_S2_API_KEY",
    "RP_DB_PATH",
    "RP_PORT",
    "RP_S2_BASE_URL",
    "RP_ARXIV_BASE_URL",
];

/// The binary with a clean `RP_*` environment, running in `dir`.
pub fn cli(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_researchpilot"));
    for v in RP_VARS {
        cmd.env_remove(v);
    }
    cmd.env_remove("RUST_LOG");
    cmd.current_dir(dir);
    cmd
}

/// `run QUESTION` against the fixture server with a database in `dir`.
pub fn run_cmd(dir: &Path, fixtures: &FixtureServer, question: &str) -> Command {
    let mut cmd = cli(dir);
    cmd.args(["run", question, "--db"]).arg(dir.join("reports.db")).args([
        "--s2-base-url",
        &fixtures.base_url,
        "--arxiv-base-url",
        &fixtures.base_url,
    ]);
    cmd
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Events from the NDJSON lines of a run's stderr.
pub fn events(o: &Output) -> Vec<PipelineEvent> {
    stderr(o)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).expect("event line"))
        .collect()
}

/// A `serve` child process and the address it announced.
pub struct Served {
    pub child: Child,
    pub base: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn serve(mut cmd: Command) -> Served {
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected serve banner {line:?}"))
        .to_string();
    Served { child, base }
}

pub fn interrupt(child: &Child) {
    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
}
