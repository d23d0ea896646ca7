use std::io::Write;
use std::sync::Mutex;

use researchpilot::domain::redact;
use researchpilot::events::EventSink;
use researchpilot::{EventType, PipelineEvent, Secret};

/// Writes every event as an NDJSON line to stderr and a one-line summary to
/// stdout. Both are redacted.
pub struct ConsoleSink {
    secrets: Vec<Secret>,
    lock: Mutex<()>,
}

impl ConsoleSink {
    pub fn new(secrets: Vec<Secret>) -> Self {
        ConsoleSink {
            secrets,
            lock: Mutex::new(()),
        }
    }
}

impl EventSink for ConsoleSink {
    fn send(&self, event: PipelineEvent) {
        let json = serde_json::to_string(&event).expect("event serializes");
        let line = redact(&json, &self.secrets);
        let human = redact(&describe(&event), &self.secrets);
        let _guard = self.lock.lock().expect("console lock poisoned");
        let _ = writeln!(std::io::stderr().lock(), "{line}");
        let _ = writeln!(std::io::stdout().lock(), "{human}");
    }
}

fn text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Human-readable stage line for one event.
pub fn describe(e: &PipelineEvent) -> String {
    let agent = e.agent.map(|a| a.as_str()).unwrap_or_default();
    let d = &e.data;
    match e.kind {
        EventType::Queued => format!("queued: {}", text(&d["question"])),
        EventType::AgentStarted => format!("[{agent}] started"),
        EventType::AgentProgress if d.get("source").is_some() => match d.get("failure").filter(|f| !f.is_null()) {
            Some(f) => format!("[{agent}] {} failed: {}", text(&d["source"]), text(f)),
            None => format!("[{agent}] {}: {} papers", text(&d["source"]), d["paper_count"]),
        },
        EventType::AgentProgress if d.get("current").is_some() => {
            format!("[{agent}] {}/{}", d["current"], d["total"])
        }
        EventType::AgentProgress => format!("[{agent}] {d}"),
        EventType::AgentCompleted if d["status"] == "failed" => format!("[{agent}] failed: {}", text(&d["error"])),
        EventType::AgentCompleted => format!("[{agent}] completed"),
        EventType::Done => format!("done: report {}", text(&d["report_id"])),
        EventType::Error => format!("error in {}: {}", text(&d["stage"]), text(&d["message"])),
    }
}
