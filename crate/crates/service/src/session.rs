//! Sessions: one workspace, one pipeline and one event log each, driven on
//! a dedicated thread per cycle.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use topopt_agents::events::{Agent, AgentEvent, Clock, Fanout, NdjsonSink, SharedLog};
use topopt_agents::personas::PersonaSet;
use topopt_agents::pipeline::{Pipeline, PipelineConfig, PipelineError, PipelineOutcome};
use topopt_agents::workspace::{Workspace, EVENTS_FILE, REPORT_FILE};

use crate::report::{generate_report, Report, ReportError, DEFAULT_LANGUAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Running,
    AwaitingFeedback,
    Aborted,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    NotFound(String),
    #[error("session is {state:?}; {action} is not allowed")]
    Conflict { state: SessionState, action: &'static str },
    #[error("request text is empty")]
    EmptyText,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub pipeline: PipelineConfig,
    /// Language tag for reports.
    pub language: String,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { pipeline: PipelineConfig { clock: Clock::Wall, ..Default::default() }, language: DEFAULT_LANGUAGE.into() }
    }
}

pub type PersonaFactory = Arc<dyn Fn() -> PersonaSet + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum CycleError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes `report.md` for an accepted pipeline and returns the report.
pub fn write_report(pipeline: &mut Pipeline, language: &str) -> Result<Report, CycleError> {
    let memory = pipeline.memory().clone();
    let (report, call) = generate_report(&memory, language, &mut pipeline.personas_mut().reporter)?;
    if let Some(call) = call {
        pipeline.log_call(Agent::Orchestrator, call)?;
    }
    pipeline.workspace().write(REPORT_FILE, report.to_markdown())?;
    Ok(report)
}

/// Opens a pipeline on `root`, streaming events to `events.ndjson` and to
/// `log`.
pub fn open_pipeline(
    root: &Path,
    config: PipelineConfig,
    personas: PersonaSet,
    log: Option<SharedLog>,
) -> io::Result<Pipeline> {
    let ws = Workspace::create(root)?;
    let file = NdjsonSink::create(&ws.path(EVENTS_FILE))?;
    let sink = match log {
        Some(log) => Box::new(Fanout(vec![Box::new(file), Box::new(log)])) as Box<dyn topopt_agents::events::EventSink>,
        None => Box::new(file),
    };
    Ok(Pipeline::new(config, personas, ws, sink))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub state: SessionState,
    pub events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Inner {
    state: SessionState,
    pipeline: Option<Pipeline>,
    error: Option<String>,
}

pub struct Session {
    pub id: String,
    root: PathBuf,
    language: String,
    log: SharedLog,
    inner: Mutex<Inner>,
    settled: Condvar,
}

impl Session {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn state(&self) -> SessionState {
        self.lock().state
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let inner = self.lock();
        SessionSnapshot {
            id: self.id.clone(),
            state: inner.state,
            events: self.log.0.lock().map_or(0, |l| l.len()),
            error: inner.error.clone(),
        }
    }

    /// Events with `seq > since`, in order.
    pub fn events_since(&self, since: u64) -> Vec<AgentEvent> {
        let log = self.log.0.lock().unwrap_or_else(|e| e.into_inner());
        log.iter().filter(|e| e.seq > since).cloned().collect()
    }

    /// Blocks until the session leaves `running` or `timeout` passes.
    pub fn wait_settled(&self, timeout: Duration) -> SessionState {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        while inner.state == SessionState::Running {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            inner = self.settled.wait_timeout(inner, left).unwrap_or_else(|e| e.into_inner()).0;
        }
        inner.state
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::create(&self.root).expect("session workspace exists")
    }

    pub fn report(&self) -> Result<String, SessionError> {
        let state = self.state();
        if state != SessionState::AwaitingFeedback {
            return Err(SessionError::Conflict { state, action: "report" });
        }
        Ok(std::fs::read_to_string(self.root.join(REPORT_FILE))?)
    }

    fn launch(
        self: &Arc<Self>,
        text: &str,
        from: SessionState,
        action: &'static str,
        step: fn(&mut Pipeline, &str) -> Result<PipelineOutcome, PipelineError>,
    ) -> Result<(), SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyText);
        }
        let mut inner = self.lock();
        if inner.state != from {
            return Err(SessionError::Conflict { state: inner.state, action });
        }
        let mut pipeline = inner.pipeline.take().expect("idle sessions hold their pipeline");
        inner.state = SessionState::Running;
        inner.error = None;
        drop(inner);
        let session = Arc::clone(self);
        let text = text.to_string();
        std::thread::spawn(move || {
            let result = step(&mut pipeline, &text).map_err(CycleError::from).and_then(|outcome| {
                if outcome.is_accepted() {
                    write_report(&mut pipeline, &session.language)?;
                }
                Ok(outcome)
            });
            let mut inner = session.lock();
            inner.state = match &result {
                Ok(PipelineOutcome::Accepted { .. }) => SessionState::AwaitingFeedback,
                Ok(PipelineOutcome::Aborted { record }) => {
                    inner.error = Some(record.reason.clone());
                    SessionState::Aborted
                }
                Err(e) => {
                    inner.error = Some(e.to_string());
                    SessionState::Aborted
                }
            };
            inner.pipeline = Some(pipeline);
            drop(inner);
            session.settled.notify_all();
        });
        Ok(())
    }

    pub fn post_query(self: &Arc<Self>, text: &str) -> Result<(), SessionError> {
        self.launch(text, SessionState::Idle, "query", Pipeline::start)
    }

    pub fn post_feedback(self: &Arc<Self>, text: &str) -> Result<(), SessionError> {
        self.launch(text, SessionState::AwaitingFeedback, "feedback", Pipeline::feedback)
    }
}

/// All sessions under one root directory; each gets `root/<id>/`.
pub struct SessionManager {
    root: PathBuf,
    options: SessionOptions,
    personas: PersonaFactory,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
}

impl SessionManager {
    pub fn new(root: impl Into<PathBuf>, options: SessionOptions, personas: PersonaFactory) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, options, personas, sessions: Mutex::new(BTreeMap::new()) })
    }

    pub fn deterministic(root: impl Into<PathBuf>) -> io::Result<Self> {
        Self::new(root, SessionOptions::default(), Arc::new(PersonaSet::deterministic))
    }

    pub fn create(&self) -> Result<Arc<Session>, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let root = self.root.join(&id);
        let log = SharedLog::default();
        let pipeline = open_pipeline(&root, self.options.pipeline.clone(), (self.personas)(), Some(log.clone()))?;
        let session = Arc::new(Session {
            id: id.clone(),
            root,
            language: self.options.language.clone(),
            log,
            inner: Mutex::new(Inner { state: SessionState::Idle, pipeline: Some(pipeline), error: None }),
            settled: Condvar::new(),
        });
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).insert(id, Arc::clone(&session));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }
}
