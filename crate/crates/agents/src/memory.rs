//! Shared session memory: the append-only audit trail every agent reads from
//! and the event stream writes to.

use serde::{Deserialize, Serialize};
use topopt_core::optimizer::{KernelError, Termination};
use topopt_core::plan::RunPlan;
use topopt_core::problem::{ConstraintKind, ObjectiveKind, ProblemSpec};

use crate::events::{AgentEvent, Diagnosis, EventBody};
use crate::gateway::CallRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCode {
    QueryMismatch,
    BcError,
    LoadInVoid,
    MissingParam,
    AspectRatio,
    FilterVsMesh,
    PointLoadSingularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    AutoCorrectable,
    Escalate,
}

/// Machine-applicable spec edit proposed by the Validator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Correction {
    SetObjective { objective: ObjectiveKind },
    MoveLoad { index: usize, x: f64, y: f64 },
    FillStressDefaults,
    SetNy { ny: usize },
    SetRMin { r_min: f64 },
    DistributeLoad { index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Finding {
    pub code: FindingCode,
    pub severity: Severity,
    pub path: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
}

impl Finding {
    /// Auto-correctable findings must carry a correction.
    pub fn is_well_formed(&self) -> bool {
        self.severity == Severity::Escalate || self.correction.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    OutputValidity,
    FormulationConsistency,
    Convergence,
    DesignQuality,
}

impl Criterion {
    pub const ORDER: [Criterion; 4] =
        [Criterion::OutputValidity, Criterion::FormulationConsistency, Criterion::Convergence, Criterion::DesignQuality];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionResult {
    pub criterion: Criterion,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerdictMetrics {
    pub discreteness: Option<f64>,
    pub checkerboard: Option<f64>,
    pub connected: Option<bool>,
    pub termination: Option<Termination>,
    pub iterations: usize,
    pub objective_first: Option<f64>,
    pub objective_last: Option<f64>,
    pub final_change: Option<f64>,
    pub volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criteria: Vec<CriterionResult>,
    pub metrics: VerdictMetrics,
    pub accepted: bool,
    pub first_failed: Option<Criterion>,
}

impl Verdict {
    /// Orders `results` by rubric priority and derives `accepted` and
    /// `first_failed`. Criteria missing from `results` count as failed.
    pub fn from_results(mut results: Vec<CriterionResult>, metrics: VerdictMetrics) -> Self {
        for c in Criterion::ORDER {
            if !results.iter().any(|r| r.criterion == c) {
                results.push(CriterionResult { criterion: c, passed: false, detail: "not evaluated".into() });
            }
        }
        results.sort_by_key(|r| r.criterion);
        results.dedup_by_key(|r| r.criterion);
        let first_failed = results.iter().find(|r| !r.passed).map(|r| r.criterion);
        Self { criteria: results, metrics, accepted: first_failed.is_none(), first_failed }
    }

    pub fn result(&self, c: Criterion) -> Option<&CriterionResult> {
        self.criteria.iter().find(|r| r.criterion == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveTarget {
    Scientist,
    Validator,
    Planner,
    Runner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerParam {
    MaxIterations,
    MoveLimit,
}

/// Run-level corrections the Reviewer can prescribe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunCorrection {
    HalveMoveLimit,
    DirectSolver,
    RelaxVolumeTolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectiveAction {
    /// Re-derive the formulation; `comment` carries user feedback when the
    /// directive comes from the feedback loop.
    Reformulate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        comment: Option<String>,
    },
    FixBc,
    IncreaseRMin { factor: f64 },
    SteepenBetaSchedule,
    ChangeConstraint { to: ConstraintKind, bound: f64 },
    AdjustOptimizer { param: OptimizerParam, value: f64 },
    RetryWith { correction: RunCorrection },
}

impl DirectiveAction {
    pub fn name(&self) -> &'static str {
        match self {
            DirectiveAction::Reformulate { .. } => "reformulate",
            DirectiveAction::FixBc => "fix_bc",
            DirectiveAction::IncreaseRMin { .. } => "increase_r_min",
            DirectiveAction::SteepenBetaSchedule => "steepen_beta_schedule",
            DirectiveAction::ChangeConstraint { .. } => "change_constraint",
            DirectiveAction::AdjustOptimizer { .. } => "adjust_optimizer",
            DirectiveAction::RetryWith { .. } => "retry_with",
        }
    }
}

/// What a directive answers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectiveOrigin {
    Verdict { verdict: usize, criterion: Criterion },
    /// A failed run diagnosed by the Reviewer.
    Run { artifact: usize, error_kind: String },
    UserFeedback { verdict: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementDirective {
    pub target: DirectiveTarget,
    pub action: DirectiveAction,
    pub rationale: String,
    pub origin: DirectiveOrigin,
}

/// Target/action pairs the routing table allows.
pub fn allowed_pair(target: DirectiveTarget, action: &DirectiveAction) -> bool {
    use DirectiveAction as A;
    use DirectiveTarget as T;
    matches!(
        (target, action),
        (T::Scientist, A::Reformulate { .. } | A::ChangeConstraint { .. } | A::FixBc)
            | (T::Validator, A::FixBc)
            | (T::Planner, A::IncreaseRMin { .. } | A::SteepenBetaSchedule | A::AdjustOptimizer { .. })
            | (T::Runner, A::RetryWith { .. })
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecCause {
    Query,
    Finding { finding: usize },
    Directive { directive: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecVersion {
    pub version: usize,
    pub spec: ProblemSpec,
    pub cause: SpecCause,
}

/// Summary of one kernel run as recorded in memory. File names are relative
/// to the session workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub run: usize,
    pub plan: usize,
    pub termination: Termination,
    pub iterations: usize,
    pub final_objective: Option<f64>,
    pub final_volume: f64,
    pub error: Option<KernelError>,
    pub density_image: String,
    pub convergence_plot: String,
    pub history: String,
    pub log: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub validator_loops: usize,
    pub reviewer_retries: usize,
    pub system_refinements: usize,
    pub user_cycles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticThresholds {
    pub max_discreteness: f64,
    pub max_checkerboard: f64,
    pub connectivity_threshold: f64,
    pub min_iterations: usize,
}

impl Default for CriticThresholds {
    fn default() -> Self {
        Self {
            max_discreteness: 0.15,
            max_checkerboard: 0.02,
            connectivity_threshold: crate::metrics::DEFAULT_CONNECTIVITY_THRESHOLD,
            min_iterations: 5,
        }
    }
}

/// Loop caps, counted per user cycle. `user_cycles = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub validator_loops: usize,
    pub reviewer_retries: usize,
    pub system_refinements: usize,
    pub user_cycles: Option<usize>,
    pub critic: CriticThresholds,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            validator_loops: 5,
            reviewer_retries: 10,
            system_refinements: 12,
            user_cycles: None,
            critic: CriticThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub reason: String,
    pub counters: Counters,
    pub last_verdict: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionMemory {
    pub user_query: String,
    pub spec_versions: Vec<SpecVersion>,
    pub plans: Vec<RunPlan>,
    pub artifacts: Vec<RunArtifacts>,
    pub verdicts: Vec<Verdict>,
    pub findings: Vec<Finding>,
    pub directives: Vec<RefinementDirective>,
    pub counters: Counters,
    pub llm_calls: Vec<CallRecord>,
    /// Conditional prompt contexts activated per formulation.
    pub injected_contexts: Vec<Vec<String>>,
    pub accepted: Vec<usize>,
    pub aborted: Option<AbortRecord>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("event {seq}: expected sequence number {expected}")]
    Gap { seq: u64, expected: u64 },
    #[error("event {seq}: {message}")]
    Dangling { seq: u64, message: String },
}

impl SessionMemory {
    pub fn current_spec(&self) -> Option<&ProblemSpec> {
        self.spec_versions.last().map(|v| &v.spec)
    }

    pub fn last_verdict(&self) -> Option<&Verdict> {
        self.verdicts.last()
    }

    pub fn is_accepted(&self) -> bool {
        self.aborted.is_none() && !self.accepted.is_empty() && self.accepted.last() == Some(&(self.verdicts.len() - 1))
    }

    /// Applies one event. This is the only way memory changes, so replaying
    /// a session's event stream rebuilds its memory exactly.
    pub fn apply(&mut self, event: &AgentEvent) -> Result<(), ReplayError> {
        let seq = event.seq;
        let dangling = |message: String| ReplayError::Dangling { seq, message };
        match &event.body {
            EventBody::Formulated { query, spec, cause, contexts } => {
                if let Some(q) = query {
                    self.user_query = q.clone();
                }
                self.check_cause(cause).map_err(dangling)?;
                self.spec_versions.push(SpecVersion {
                    version: self.spec_versions.len() + 1,
                    spec: spec.clone(),
                    cause: *cause,
                });
                self.injected_contexts.push(contexts.clone());
            }
            EventBody::Finding { finding } => self.findings.push(finding.clone()),
            EventBody::Corrected { finding, spec } => {
                if *finding >= self.findings.len() {
                    return Err(dangling(format!("correction cites unknown finding {finding}")));
                }
                self.spec_versions.push(SpecVersion {
                    version: self.spec_versions.len() + 1,
                    spec: spec.clone(),
                    cause: SpecCause::Finding { finding: *finding },
                });
            }
            EventBody::Escalated { findings } => {
                if findings.iter().any(|&f| f >= self.findings.len()) {
                    return Err(dangling("escalation cites unknown finding".into()));
                }
                self.counters.validator_loops += 1;
            }
            EventBody::Planned { plan } => self.plans.push(plan.clone()),
            EventBody::RunStarted { .. } => {}
            EventBody::RunFinished { artifacts } => self.artifacts.push(artifacts.clone()),
            EventBody::Diagnosed { diagnosis } => {
                if let Diagnosis::Retry { directive } = diagnosis {
                    self.check_origin(&directive.origin).map_err(dangling)?;
                    self.directives.push(directive.clone());
                    self.counters.reviewer_retries += 1;
                }
            }
            EventBody::Verdict { verdict } => self.verdicts.push(verdict.clone()),
            EventBody::Directive { directive } => {
                self.check_origin(&directive.origin).map_err(dangling)?;
                match directive.origin {
                    DirectiveOrigin::UserFeedback { .. } => self.counters.user_cycles += 1,
                    _ => self.counters.system_refinements += 1,
                }
                self.directives.push(directive.clone());
            }
            EventBody::Accepted { verdict, .. } => self.accepted.push(*verdict),
            EventBody::Aborted { record } => self.aborted = Some(record.clone()),
            EventBody::LlmCall { call } => self.llm_calls.push(call.clone()),
        }
        Ok(())
    }

    fn check_cause(&self, cause: &SpecCause) -> Result<(), String> {
        match *cause {
            SpecCause::Query => Ok(()),
            SpecCause::Finding { finding } if finding < self.findings.len() => Ok(()),
            SpecCause::Directive { directive } if directive < self.directives.len() => Ok(()),
            other => Err(format!("spec version cites unknown {other:?}")),
        }
    }

    fn check_origin(&self, origin: &DirectiveOrigin) -> Result<(), String> {
        let ok = match *origin {
            DirectiveOrigin::Verdict { verdict, .. } | DirectiveOrigin::UserFeedback { verdict } => {
                verdict < self.verdicts.len()
            }
            DirectiveOrigin::Run { artifact, .. } => artifact < self.artifacts.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("directive cites unknown {origin:?}"))
        }
    }

    /// Rebuilds memory from an event stream, checking sequence numbers are
    /// contiguous from 1.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a AgentEvent>) -> Result<Self, ReplayError> {
        let mut memory = Self::default();
        for (i, e) in events.into_iter().enumerate() {
            let expected = i as u64 + 1;
            if e.seq != expected {
                return Err(ReplayError::Gap { seq: e.seq, expected });
            }
            memory.apply(e)?;
        }
        Ok(memory)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("memory serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(c: Criterion, passed: bool) -> CriterionResult {
        CriterionResult { criterion: c, passed, detail: String::new() }
    }

    #[test]
    fn verdict_orders_and_picks_first_failure() {
        let v = Verdict::from_results(
            vec![
                result(Criterion::DesignQuality, false),
                result(Criterion::OutputValidity, true),
                result(Criterion::Convergence, false),
                result(Criterion::FormulationConsistency, true),
            ],
            VerdictMetrics::default(),
        );
        assert_eq!(v.criteria.iter().map(|r| r.criterion).collect::<Vec<_>>(), Criterion::ORDER.to_vec());
        assert_eq!(v.first_failed, Some(Criterion::Convergence));
        assert!(!v.accepted);
    }

    #[test]
    fn missing_criteria_fail() {
        let v = Verdict::from_results(vec![result(Criterion::OutputValidity, true)], VerdictMetrics::default());
        assert_eq!(v.first_failed, Some(Criterion::FormulationConsistency));
    }

    #[test]
    fn all_passing_is_accepted() {
        let v = Verdict::from_results(Criterion::ORDER.map(|c| result(c, true)).to_vec(), VerdictMetrics::default());
        assert!(v.accepted);
        assert_eq!(v.first_failed, None);
    }

    #[test]
    fn routing_table_pairs() {
        assert!(allowed_pair(DirectiveTarget::Planner, &DirectiveAction::IncreaseRMin { factor: 1.5 }));
        assert!(allowed_pair(DirectiveTarget::Validator, &DirectiveAction::FixBc));
        assert!(!allowed_pair(DirectiveTarget::Runner, &DirectiveAction::SteepenBetaSchedule));
        assert!(!allowed_pair(
            DirectiveTarget::Planner,
            &DirectiveAction::RetryWith { correction: RunCorrection::DirectSolver }
        ));
    }

    #[test]
    fn auto_correctable_findings_need_corrections() {
        let mut f = Finding {
            code: FindingCode::FilterVsMesh,
            severity: Severity::AutoCorrectable,
            path: "regularization.r_min".into(),
            message: String::new(),
            correction: None,
        };
        assert!(!f.is_well_formed());
        f.correction = Some(Correction::SetRMin { r_min: 0.1 });
        assert!(f.is_well_formed());
    }
}
