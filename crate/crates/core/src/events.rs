//! Lifecycle event emission.
//!
//! A [`RunEmitter`] stamps events with a per-run sequence number and a
//! timestamp, and refuses to emit anything after the terminal `done` or
//! `error` event. Where the events go is up to the [`EventSink`].

use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::domain::{now_utc, Agent, EventType, PipelineEvent};

pub trait EventSink: Send + Sync {
    fn send(&self, event: PipelineEvent);
}

impl EventSink for mpsc::UnboundedSender<PipelineEvent> {
    fn send(&self, event: PipelineEvent) {
        // Receiver gone means the client disconnected; the run still finishes.
        let _ = mpsc::UnboundedSender::send(self, event);
    }
}

impl<T: EventSink + ?Sized> EventSink for Arc<T> {
    fn send(&self, event: PipelineEvent) {
        (**self).send(event)
    }
}

/// Collects events in memory.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<PipelineEvent>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<PipelineEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }
}

impl EventSink for EventLog {
    fn send(&self, event: PipelineEvent) {
        self.events.lock().expect("event log poisoned").push(event);
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn send(&self, _event: PipelineEvent) {}
}

#[derive(Debug, Default)]
struct EmitterState {
    next_seq: u64,
    terminated: bool,
}

pub struct RunEmitter<'a> {
    sink: &'a dyn EventSink,
    state: Mutex<EmitterState>,
}

impl<'a> RunEmitter<'a> {
    pub fn new(sink: &'a dyn EventSink) -> Self {
        RunEmitter {
            sink,
            state: Mutex::new(EmitterState::default()),
        }
    }

    /// Emits one event; returns false if the run already terminated.
    pub fn emit(&self, kind: EventType, agent: Option<Agent>, data: Value) -> bool {
        debug_assert_eq!(kind.is_agent_scoped(), agent.is_some());
        let mut state = self.state.lock().expect("emitter poisoned");
        if state.terminated {
            return false;
        }
        let event = PipelineEvent {
            kind,
            agent,
            seq: state.next_seq,
            ts: now_utc(),
            data,
        };
        state.next_seq += 1;
        state.terminated = kind.is_terminal();
        // Sending under the lock keeps sink order equal to seq order.
        self.sink.send(event);
        true
    }

    pub fn is_terminated(&self) -> bool {
        self.state.lock().expect("emitter poisoned").terminated
    }

    pub fn queued(&self, question: &str) {
        self.emit(EventType::Queued, None, json!({ "question": question }));
    }

    pub fn started(&self, agent: Agent) {
        self.emit(EventType::AgentStarted, Some(agent), json!({}));
    }

    pub fn progress(&self, agent: Agent, data: Value) {
        self.emit(EventType::AgentProgress, Some(agent), data);
    }

    pub fn completed(&self, agent: Agent, summary: Value) {
        self.emit(EventType::AgentCompleted, Some(agent), summary);
    }

    pub fn done(&self, report_id: &str) {
        self.emit(EventType::Done, None, json!({ "report_id": report_id }));
    }

    pub fn error(&self, stage: &str, message: &str) {
        self.emit(EventType::Error, None, json!({ "stage": stage, "message": message }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_is_dense_and_nothing_follows_terminal() {
        let log = EventLog::new();
        let em = RunEmitter::new(&log);
        em.queued("q");
        em.started(Agent::Search);
        em.error("search", "boom");
        em.done("late");
        assert!(em.is_terminated());
        let events = log.events();
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(events.last().unwrap().kind, EventType::Error);
    }

    #[test]
    fn channel_sink_tolerates_closed_receiver() {
        let (tx, rx) = mpsc::unbounded_channel();
        drop(rx);
        let em = RunEmitter::new(&tx);
        em.queued("q");
    }
}
