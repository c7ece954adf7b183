//! Orchestration: Scientist → Validator loop → Planner → Runner/Reviewer
//! loop → Critic → routing, repeated until acceptance or abort.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::events::{Agent, AgentEvent, Clock, Diagnosis, EventBody, EventSink};
use crate::faults::FaultPlan;
use crate::gateway::CallRecord;
use crate::intent::{extract_intent, QueryIntent};
use crate::memory::{
    AbortRecord, Counters, DirectiveAction, DirectiveOrigin, DirectiveTarget, Policy, RefinementDirective,
    ReplayError, RunCorrection, SessionMemory, SpecCause,
};
use crate::personas::PersonaSet;
use crate::roles::critic::critic_evaluate;
use crate::roles::planner::planner_plan;
use crate::roles::reviewer::reviewer_diagnose;
use crate::roles::routing::{route_refinement, Route, RouteInput};
use crate::roles::runner::{runner_execute, RunOutput};
use crate::roles::scientist::{scientist_formulate, Instruction};
use crate::roles::validator::{apply_correction, validator_check};
use crate::workspace::Workspace;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub policy: Policy,
    pub seed: u64,
    pub faults: FaultPlan,
    pub clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PipelineOutcome {
    Accepted { verdict: usize, run: usize, spec_version: usize },
    Aborted { record: AbortRecord },
}

impl PipelineOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, PipelineOutcome::Accepted { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("workspace or event sink I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("memory rejected an event: {0}")]
    Memory(#[from] ReplayError),
    #[error("{0}")]
    WrongState(&'static str),
}

#[derive(Debug, Clone)]
enum Pending {
    Query,
    Escalation(Vec<usize>),
    Directive(usize),
}

#[derive(Debug, Clone)]
enum Step {
    Formulate(Pending),
    Validate,
    Plan,
    Run,
    Critique,
}

pub struct Pipeline {
    config: PipelineConfig,
    personas: PersonaSet,
    ws: Workspace,
    sink: Box<dyn EventSink>,
    memory: SessionMemory,
    seq: u64,
    query: String,
    intent: Option<QueryIntent>,
    cycle_base: Counters,
    validated_once: bool,
    last_run: Option<RunOutput>,
    tried: Vec<RunCorrection>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, personas: PersonaSet, ws: Workspace, sink: Box<dyn EventSink>) -> Self {
        Self {
            config,
            personas,
            ws,
            sink,
            memory: SessionMemory::default(),
            seq: 0,
            query: String::new(),
            intent: None,
            cycle_base: Counters::default(),
            validated_once: false,
            last_run: None,
            tried: Vec::new(),
        }
    }

    pub fn memory(&self) -> &SessionMemory {
        &self.memory
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn personas_mut(&mut self) -> &mut PersonaSet {
        &mut self.personas
    }

    /// Runs the first user cycle for `query`.
    pub fn start(&mut self, query: &str) -> Result<PipelineOutcome, PipelineError> {
        if self.seq > 0 {
            return Err(PipelineError::WrongState("session already has a query"));
        }
        if query.trim().is_empty() {
            return Err(PipelineError::WrongState("query is empty"));
        }
        self.query = query.to_string();
        self.intent = extract_intent(query).ok();
        self.drive(Step::Formulate(Pending::Query))
    }

    /// Starts another user cycle from an accepted session, keeping memory.
    pub fn feedback(&mut self, comment: &str) -> Result<PipelineOutcome, PipelineError> {
        if !self.memory.is_accepted() {
            return Err(PipelineError::WrongState("feedback needs an accepted session"));
        }
        if self.config.policy.user_cycles.is_some_and(|cap| self.memory.counters.user_cycles >= cap) {
            return self.abort("user feedback cycle cap reached".into());
        }
        let verdict = self.memory.verdicts.len() - 1;
        self.emit(
            Agent::User,
            EventBody::Directive {
                directive: RefinementDirective {
                    target: DirectiveTarget::Scientist,
                    action: DirectiveAction::Reformulate { comment: Some(comment.to_string()) },
                    rationale: "user feedback".into(),
                    origin: DirectiveOrigin::UserFeedback { verdict },
                },
            },
        )?;
        self.cycle_base = self.memory.counters;
        self.tried.clear();
        let index = self.memory.directives.len() - 1;
        self.drive(Step::Formulate(Pending::Directive(index)))
    }

    /// Appends a model call made outside the pipeline, such as the report
    /// narrative, to the event stream.
    pub fn log_call(&mut self, agent: Agent, call: CallRecord) -> Result<(), PipelineError> {
        self.emit(agent, EventBody::LlmCall { call })
    }

    fn emit(&mut self, agent: Agent, body: EventBody) -> Result<(), PipelineError> {
        self.seq += 1;
        let event = AgentEvent { seq: self.seq, timestamp: self.config.clock.stamp(self.seq), agent, body };
        self.memory.apply(&event)?;
        self.sink.emit(&event)?;
        Ok(())
    }

    fn record_call(&mut self, agent: Agent, call: Option<CallRecord>) -> Result<(), PipelineError> {
        match call {
            Some(call) => self.emit(agent, EventBody::LlmCall { call }),
            None => Ok(()),
        }
    }

    fn abort(&mut self, reason: String) -> Result<PipelineOutcome, PipelineError> {
        let record = AbortRecord {
            reason,
            counters: self.memory.counters,
            last_verdict: self.memory.verdicts.len().checked_sub(1),
        };
        self.emit(Agent::Orchestrator, EventBody::Aborted { record: record.clone() })?;
        Ok(PipelineOutcome::Aborted { record })
    }

    fn write_current_spec(&self) -> io::Result<()> {
        let v = self.memory.spec_versions.last().expect("spec recorded");
        self.ws.write(&Workspace::spec_name(v.version), v.spec.to_json())
    }

    fn memory_summary(&self) -> String {
        json!({
            "spec_versions": self.memory.spec_versions.len(),
            "current_spec": self.memory.current_spec(),
            "last_verdict": self.memory.last_verdict(),
            "directives": self.memory.directives.len(),
        })
        .to_string()
    }

    fn drive(&mut self, mut step: Step) -> Result<PipelineOutcome, PipelineError> {
        loop {
            step = match step {
                Step::Formulate(pending) => match self.formulate(pending)? {
                    Ok(next) => next,
                    Err(reason) => return self.abort(reason),
                },
                Step::Validate => match self.validate()? {
                    Ok(next) => next,
                    Err(reason) => return self.abort(reason),
                },
                Step::Plan => match self.plan()? {
                    Ok(next) => next,
                    Err(reason) => return self.abort(reason),
                },
                Step::Run => match self.run()? {
                    Ok(next) => next,
                    Err(reason) => return self.abort(reason),
                },
                Step::Critique => match self.critique()? {
                    Ok(Ok(next)) => next,
                    Ok(Err(outcome)) => return Ok(outcome),
                    Err(reason) => return self.abort(reason),
                },
            };
        }
    }

    fn formulate(&mut self, pending: Pending) -> Result<Result<Step, String>, PipelineError> {
        let findings;
        let directive;
        let (instruction, cause) = match &pending {
            Pending::Query => (Instruction::Query, SpecCause::Query),
            Pending::Escalation(indices) => {
                findings = indices.iter().map(|&i| self.memory.findings[i].clone()).collect::<Vec<_>>();
                let cause = SpecCause::Finding { finding: *indices.first().expect("escalation cites findings") };
                (Instruction::Escalation(&findings), cause)
            }
            Pending::Directive(i) => {
                directive = self.memory.directives[*i].clone();
                (Instruction::Directive(&directive), SpecCause::Directive { directive: *i })
            }
        };
        let summary = self.memory_summary();
        let query = self.query.clone();
        let result = scientist_formulate(
            &query,
            self.memory.current_spec(),
            instruction,
            &summary,
            &mut self.personas.scientist,
            &self.config.faults,
        );
        let formulation = match result {
            Ok(f) => f,
            Err(e) => return Ok(Err(format!("scientist failed: {e}"))),
        };
        self.record_call(Agent::Scientist, formulation.call)?;
        let query = matches!(pending, Pending::Query).then_some(query);
        self.emit(
            Agent::Scientist,
            EventBody::Formulated { query, spec: formulation.spec, cause, contexts: formulation.contexts },
        )?;
        self.write_current_spec()?;
        Ok(Ok(Step::Validate))
    }

    fn validate(&mut self) -> Result<Result<Step, String>, PipelineError> {
        let disabled = if self.validated_once { Vec::new() } else { self.config.faults.initially_disabled() };
        self.validated_once = true;
        let spec = self.memory.current_spec().expect("formulated before validation").clone();
        let report = match validator_check(
            &spec,
            &self.query,
            self.intent.as_ref(),
            &disabled,
            &mut self.personas.validator,
        ) {
            Ok(r) => r,
            Err(e) => return Ok(Err(format!("validator failed: {e}"))),
        };
        self.record_call(Agent::Validator, report.call.clone())?;
        let first = self.memory.findings.len();
        let escalates = report.escalates();
        for finding in report.findings.iter().cloned() {
            self.emit(Agent::Validator, EventBody::Finding { finding })?;
        }
        if escalates {
            let used = self.memory.counters.validator_loops - self.cycle_base.validator_loops;
            if used >= self.config.policy.validator_loops {
                return Ok(Err(format!(
                    "validator loop cap of {} reached; see findings",
                    self.config.policy.validator_loops
                )));
            }
            let indices: Vec<usize> = report
                .findings
                .iter()
                .enumerate()
                .filter(|(_, f)| f.severity == crate::memory::Severity::Escalate)
                .map(|(i, _)| first + i)
                .collect();
            self.emit(Agent::Validator, EventBody::Escalated { findings: indices.clone() })?;
            return Ok(Ok(Step::Formulate(Pending::Escalation(indices))));
        }
        let mut current = spec;
        for (i, f) in report.findings.iter().enumerate() {
            let Some(correction) = &f.correction else { continue };
            current = match apply_correction(&current, correction) {
                Ok(s) => s,
                Err(e) => return Ok(Err(format!("validator correction for `{}` is invalid: {e}", f.path))),
            };
            self.emit(Agent::Validator, EventBody::Corrected { finding: first + i, spec: current.clone() })?;
            self.write_current_spec()?;
        }
        Ok(Ok(Step::Plan))
    }

    fn plan(&mut self) -> Result<Result<Step, String>, PipelineError> {
        let spec = self.memory.current_spec().expect("validated spec");
        let overrides: Vec<RefinementDirective> = self
            .memory
            .directives
            .iter()
            .filter(|d| matches!(d.target, DirectiveTarget::Planner | DirectiveTarget::Runner))
            .cloned()
            .collect();
        let plan = planner_plan(spec, &overrides, self.config.faults.base_solver(), self.config.seed);
        if let Err(e) = plan.validate() {
            return Ok(Err(format!("planner produced an invalid plan: {e}")));
        }
        let json = plan.to_json();
        self.emit(Agent::Planner, EventBody::Planned { plan })?;
        self.ws.write(&Workspace::plan_name(self.memory.plans.len()), json)?;
        Ok(Ok(Step::Run))
    }

    fn run(&mut self) -> Result<Result<Step, String>, PipelineError> {
        let plan_index = self.memory.plans.len() - 1;
        let run = self.memory.artifacts.len() + 1;
        self.emit(Agent::Runner, EventBody::RunStarted { run, plan: plan_index })?;
        let out = runner_execute(&self.memory.plans[plan_index], plan_index, run, &self.ws)?;
        self.emit(Agent::Runner, EventBody::RunFinished { artifacts: out.artifacts.clone() })?;
        let failed = out.artifacts.error.is_some();
        self.last_run = Some(out);
        if !failed {
            self.tried.clear();
            return Ok(Ok(Step::Critique));
        }
        let used = self.memory.counters.reviewer_retries - self.cycle_base.reviewer_retries;
        if used >= self.config.policy.reviewer_retries {
            return Ok(Ok(Step::Critique));
        }
        let artifacts = &self.last_run.as_ref().expect("just stored").artifacts;
        let tail = self.history_tail(artifacts.history.as_str());
        let diagnosed = reviewer_diagnose(
            artifacts,
            self.memory.artifacts.len() - 1,
            &self.memory.plans[plan_index],
            &tail,
            &self.tried,
            &mut self.personas.reviewer,
        );
        let (diagnosis, call) = match diagnosed {
            Ok(d) => d,
            Err(e) => return Ok(Err(format!("reviewer failed: {e}"))),
        };
        self.record_call(Agent::Reviewer, call)?;
        self.emit(Agent::Reviewer, EventBody::Diagnosed { diagnosis: diagnosis.clone() })?;
        match diagnosis {
            Diagnosis::GiveUp { reason } => Ok(Err(format!("reviewer gave up: {reason}"))),
            Diagnosis::Retry { directive } => Ok(Ok(self.follow(&directive))),
        }
    }

    fn history_tail(&self, name: &str) -> String {
        let text = std::fs::read_to_string(self.ws.path(name)).unwrap_or_default();
        let lines: Vec<&str> = text.lines().collect();
        lines[lines.len().saturating_sub(6)..].join("\n")
    }

    fn follow(&mut self, d: &RefinementDirective) -> Step {
        if let DirectiveAction::RetryWith { correction } = d.action {
            self.tried.push(correction);
        }
        match d.target {
            DirectiveTarget::Scientist => Step::Formulate(Pending::Directive(self.memory.directives.len() - 1)),
            DirectiveTarget::Validator => Step::Validate,
            DirectiveTarget::Planner | DirectiveTarget::Runner => Step::Plan,
        }
    }

    #[allow(clippy::type_complexity)]
    fn critique(&mut self) -> Result<Result<Result<Step, PipelineOutcome>, String>, PipelineError> {
        let out = self.last_run.take().expect("critique follows a run");
        let plan = self.memory.plans[out.artifacts.plan].clone();
        let evaluated = critic_evaluate(
            &out.artifacts,
            &out.result,
            &plan.spec,
            &self.query,
            self.intent.as_ref(),
            &self.ws,
            &self.config.policy.critic,
            &mut self.personas.critic,
        );
        let (verdict, call) = match evaluated {
            Ok(v) => v,
            Err(e) => return Ok(Err(format!("critic failed: {e}"))),
        };
        self.record_call(Agent::Critic, call)?;
        self.emit(Agent::Critic, EventBody::Verdict { verdict: verdict.clone() })?;
        let verdict_index = self.memory.verdicts.len() - 1;
        let route = route_refinement(&RouteInput {
            verdict: &verdict,
            verdict_index,
            plan: &plan,
            artifacts: &out.artifacts,
            intent: self.intent.as_ref(),
            tried: &self.tried,
            thresholds: &self.config.policy.critic,
            refinements_used: self.memory.counters.system_refinements - self.cycle_base.system_refinements,
            cap: self.config.policy.system_refinements,
        });
        self.last_run = Some(out);
        match route {
            Route::Accept => {
                let run = self.memory.artifacts.len();
                let spec_version = self.memory.spec_versions.len();
                self.emit(Agent::Orchestrator, EventBody::Accepted { verdict: verdict_index, run, spec_version })?;
                Ok(Ok(Err(PipelineOutcome::Accepted { verdict: verdict_index, run, spec_version })))
            }
            Route::Refine(directive) => {
                self.emit(Agent::Critic, EventBody::Directive { directive: directive.clone() })?;
                Ok(Ok(Ok(self.follow(&directive))))
            }
            Route::Abort(reason) => Ok(Err(reason)),
        }
    }
}

/// One-shot pipeline run: returns the outcome and the final memory.
pub fn run_pipeline(
    query: &str,
    config: PipelineConfig,
    personas: PersonaSet,
    ws: Workspace,
    sink: Box<dyn EventSink>,
) -> Result<(PipelineOutcome, SessionMemory), PipelineError> {
    let mut p = Pipeline::new(config, personas, ws, sink);
    let outcome = p.start(query)?;
    Ok((outcome, p.memory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::SharedLog;
    use crate::intent::benchmark_query;
    use topopt_core::problem::{builtin_benchmark, Benchmark};

    /// Cantilever small enough for unit tests, as an embedded problem.
    fn small_query() -> String {
        let mut spec = builtin_benchmark(Benchmark::Cantilever);
        spec.geometry.nx = 48;
        spec.geometry.ny = 16;
        spec.regularization.r_min = 1.5 * spec.geometry.element_size();
        format!("Solve this problem: {}", spec.to_json())
    }

    fn pipeline(config: PipelineConfig) -> (Pipeline, SharedLog, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::create(dir.path()).unwrap();
        let log = SharedLog::default();
        (Pipeline::new(config, PersonaSet::deterministic(), ws, Box::new(log.clone())), log, dir)
    }

    #[test]
    fn small_cantilever_is_accepted_without_refinement() {
        let (mut p, log, _dir) = pipeline(PipelineConfig::default());
        let outcome = p.start(&small_query()).unwrap();
        assert!(outcome.is_accepted(), "{outcome:?}\n{}", p.memory().to_json());
        let m = p.memory();
        assert_eq!(m.counters, Counters::default());
        let events = log.0.lock().unwrap().clone();
        assert_eq!(events.first().unwrap().kind(), "formulated");
        assert_eq!(events.last().unwrap().kind(), "accepted");
        assert_eq!(SessionMemory::replay(&events).unwrap(), *m);
        for name in ["spec_v1.json", "plan_v1.json", "history_v1.csv", "density_v1.png", "convergence_v1.png"] {
            assert!(p.workspace().has_content(name), "{name}");
        }
    }

    #[test]
    fn zero_refinement_cap_aborts_on_failing_verdict() {
        let mut config = PipelineConfig::default();
        config.policy.system_refinements = 0;
        config.faults.faults = vec![crate::faults::Fault::SmallRMin];
        let mut spec = builtin_benchmark(Benchmark::MbbMidRight);
        spec.geometry.nx = 60;
        spec.geometry.ny = 20;
        spec.regularization.r_min = 1.5 * spec.geometry.element_size();
        let (mut p, _log, _dir) = pipeline(config);
        let outcome = p.start(&format!("mbb {}", spec.to_json())).unwrap();
        let PipelineOutcome::Aborted { record } = outcome else { panic!("expected abort: {outcome:?}") };
        assert!(record.reason.contains("cap"), "{}", record.reason);
        assert_eq!(record.last_verdict, Some(0));
    }

    #[test]
    fn unknown_query_aborts() {
        let (mut p, log, _dir) = pipeline(PipelineConfig::default());
        let outcome = p.start("design me a bridge").unwrap();
        assert!(!outcome.is_accepted());
        assert_eq!(log.0.lock().unwrap().len(), 1);
    }

    #[test]
    fn feedback_requires_acceptance() {
        let (mut p, _log, _dir) = pipeline(PipelineConfig::default());
        assert!(matches!(p.feedback("add a hole"), Err(PipelineError::WrongState(_))));
        assert!(p.start("").is_err());
        let _ = benchmark_query(Benchmark::Cantilever);
    }
}
