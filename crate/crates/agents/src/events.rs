//! Agent event stream: one record per agent step, written as ndjson.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use topopt_core::plan::RunPlan;
use topopt_core::problem::ProblemSpec;

use crate::gateway::CallRecord;
use crate::memory::{AbortRecord, Finding, RefinementDirective, RunArtifacts, SpecCause, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Scientist,
    Validator,
    Planner,
    Runner,
    Reviewer,
    Critic,
    User,
    Orchestrator,
}

impl Agent {
    pub fn name(self) -> &'static str {
        match self {
            Agent::Scientist => "scientist",
            Agent::Validator => "validator",
            Agent::Planner => "planner",
            Agent::Runner => "runner",
            Agent::Reviewer => "reviewer",
            Agent::Critic => "critic",
            Agent::User => "user",
            Agent::Orchestrator => "orchestrator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Diagnosis {
    Retry { directive: RefinementDirective },
    GiveUp { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Formulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query: Option<String>,
        spec: ProblemSpec,
        cause: SpecCause,
        contexts: Vec<String>,
    },
    Finding {
        finding: Finding,
    },
    Corrected {
        finding: usize,
        spec: ProblemSpec,
    },
    Escalated {
        findings: Vec<usize>,
    },
    Planned {
        plan: RunPlan,
    },
    RunStarted {
        run: usize,
        plan: usize,
    },
    RunFinished {
        artifacts: RunArtifacts,
    },
    Diagnosed {
        diagnosis: Diagnosis,
    },
    Verdict {
        verdict: Verdict,
    },
    Directive {
        directive: RefinementDirective,
    },
    Accepted {
        verdict: usize,
        run: usize,
        spec_version: usize,
    },
    Aborted {
        record: AbortRecord,
    },
    LlmCall {
        call: CallRecord,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Formulated { .. } => "formulated",
            EventBody::Finding { .. } => "finding",
            EventBody::Corrected { .. } => "corrected",
            EventBody::Escalated { .. } => "escalated",
            EventBody::Planned { .. } => "planned",
            EventBody::RunStarted { .. } => "run_started",
            EventBody::RunFinished { .. } => "run_finished",
            EventBody::Diagnosed { .. } => "diagnosed",
            EventBody::Verdict { .. } => "verdict",
            EventBody::Directive { .. } => "directive",
            EventBody::Accepted { .. } => "accepted",
            EventBody::Aborted { .. } => "aborted",
            EventBody::LlmCall { .. } => "llm_call",
        }
    }
}

/// Wire record `{seq, timestamp, agent, kind, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub seq: u64,
    pub timestamp: u64,
    pub agent: Agent,
    #[serde(flatten)]
    pub body: EventBody,
}

impl AgentEvent {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Source of event timestamps. `Logical` stamps each event with its sequence
/// number so identical sessions produce identical streams; `Wall` uses Unix
/// milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Logical,
    Wall,
}

impl Clock {
    pub fn stamp(self, seq: u64) -> u64 {
        match self {
            Clock::Logical => seq,
            Clock::Wall => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
        }
    }
}

pub trait EventSink: Send {
    fn emit(&mut self, event: &AgentEvent) -> io::Result<()>;
}

impl EventSink for Vec<AgentEvent> {
    fn emit(&mut self, event: &AgentEvent) -> io::Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

/// Appends one JSON line per event and flushes after each.
pub struct NdjsonSink {
    file: File,
}

impl NdjsonSink {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self { file: File::options().create(true).append(true).open(path)? })
    }
}

impl EventSink for NdjsonSink {
    fn emit(&mut self, event: &AgentEvent) -> io::Result<()> {
        writeln!(self.file, "{}", event.to_line())?;
        self.file.flush()
    }
}

/// Shared in-memory log, for observers on other threads.
#[derive(Clone, Default)]
pub struct SharedLog(pub Arc<Mutex<Vec<AgentEvent>>>);

impl EventSink for SharedLog {
    fn emit(&mut self, event: &AgentEvent) -> io::Result<()> {
        self.0.lock().expect("event log poisoned").push(event.clone());
        Ok(())
    }
}

/// Sends every event to each inner sink in order.
pub struct Fanout(pub Vec<Box<dyn EventSink>>);

impl EventSink for Fanout {
    fn emit(&mut self, event: &AgentEvent) -> io::Result<()> {
        self.0.iter_mut().try_for_each(|s| s.emit(event))
    }
}

pub fn read_events(path: &Path) -> io::Result<Vec<AgentEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::SessionMemory;
    use topopt_core::problem::{builtin_benchmark, Benchmark};

    fn formulated(seq: u64) -> AgentEvent {
        AgentEvent {
            seq,
            timestamp: Clock::Logical.stamp(seq),
            agent: Agent::Scientist,
            body: EventBody::Formulated {
                query: Some("cantilever".into()),
                spec: builtin_benchmark(Benchmark::Cantilever),
                cause: SpecCause::Query,
                contexts: vec![],
            },
        }
    }

    #[test]
    fn wire_layout() {
        let line = formulated(1).to_line();
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        for k in ["seq", "timestamp", "agent", "kind", "payload"] {
            assert!(keys.contains(&k.to_string()), "{k} missing from {line}");
        }
        assert!(line.starts_with(r#"{"seq":1,"timestamp":1,"agent":"scientist","kind":"formulated","payload":"#));
    }

    #[test]
    fn event_round_trips() {
        let e = formulated(3);
        let back: AgentEvent = serde_json::from_str(&e.to_line()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn ndjson_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        let mut sink = NdjsonSink::create(&path).unwrap();
        for s in 1..=3 {
            sink.emit(&formulated(s)).unwrap();
        }
        let events = read_events(&path).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(SessionMemory::replay(&events).unwrap().spec_versions.len(), 3);
    }

    #[test]
    fn replay_rejects_gaps() {
        let events = vec![formulated(1), formulated(3)];
        assert!(SessionMemory::replay(&events).is_err());
    }
}
