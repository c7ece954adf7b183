//! Routing policy: which agent a failed verdict goes back to.

use topopt_core::optimizer::Termination;
use topopt_core::plan::RunPlan;
use topopt_core::problem::ConstraintKind;

use super::critic::{quality_issue, QualityIssue};
use super::reviewer::{remedy, Remedy};
use crate::intent::QueryIntent;
use crate::memory::{
    Criterion, CriticThresholds, DirectiveAction, DirectiveOrigin, DirectiveTarget, OptimizerParam,
    RefinementDirective, RunArtifacts, RunCorrection, Verdict,
};

pub const R_MIN_GROWTH: f64 = 1.5;
pub const MAX_ITERATION_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    Accept,
    Refine(RefinementDirective),
    Abort(String),
}

pub struct RouteInput<'a> {
    pub verdict: &'a Verdict,
    pub verdict_index: usize,
    pub plan: &'a RunPlan,
    pub artifacts: &'a RunArtifacts,
    pub intent: Option<&'a QueryIntent>,
    /// Runner corrections issued since the last successful run.
    pub tried: &'a [RunCorrection],
    pub thresholds: &'a CriticThresholds,
    /// System refinements already spent in this user cycle.
    pub refinements_used: usize,
    pub cap: usize,
}

fn directive(target: DirectiveTarget, action: DirectiveAction, rationale: String, origin: DirectiveOrigin) -> RefinementDirective {
    RefinementDirective { target, action, rationale, origin }
}

/// Addresses the verdict's first failed criterion, or accepts, or aborts once
/// the refinement cap is spent.
pub fn route_refinement(input: &RouteInput<'_>) -> Route {
    let v = input.verdict;
    let Some(criterion) = v.first_failed else {
        return Route::Accept;
    };
    if input.refinements_used >= input.cap {
        return Route::Abort(format!(
            "system refinement cap of {} reached with {criterion:?} still failing",
            input.cap
        ));
    }
    let origin = DirectiveOrigin::Verdict { verdict: input.verdict_index, criterion };
    let detail = v.result(criterion).map_or(String::new(), |r| r.detail.clone());
    let spec = &input.plan.spec;
    let d = match criterion {
        Criterion::OutputValidity => {
            let correction = match input.artifacts.error.as_ref().map(|e| remedy(e, input.plan, input.tried)) {
                Some(Remedy::Retry(c)) => c,
                _ => RunCorrection::HalveMoveLimit,
            };
            directive(
                DirectiveTarget::Runner,
                DirectiveAction::RetryWith { correction },
                format!("output invalid ({detail}); retrying with {correction:?}"),
                origin,
            )
        }
        Criterion::FormulationConsistency => {
            let action = match input.intent {
                Some(i) if spec.objective.kind != i.objective => DirectiveAction::Reformulate { comment: None },
                Some(i)
                    if spec.constraints.iter().map(|c| c.kind).ne([i.constraint])
                        || i.volume_fraction.is_some_and(|want| spec.volume_bound() != Some(want)) =>
                {
                    let bound = match i.constraint {
                        ConstraintKind::VolumeFraction => i.volume_fraction.or(spec.volume_bound()).unwrap_or(0.5),
                        ConstraintKind::VonMisesStress => {
                            spec.constraints.iter().find(|c| c.kind == i.constraint).map_or(1.0, |c| c.bound)
                        }
                    };
                    DirectiveAction::ChangeConstraint { to: i.constraint, bound }
                }
                Some(_) => DirectiveAction::FixBc,
                None => DirectiveAction::Reformulate { comment: None },
            };
            directive(DirectiveTarget::Scientist, action, format!("formulation inconsistent: {detail}"), origin)
        }
        Criterion::Convergence => {
            let opt = &spec.optimizer;
            let oscillating = input.artifacts.termination == Termination::MaxIterations
                && v.metrics.final_change.is_some_and(|c| c >= 0.5 * opt.move_limit);
            let (param, value) = if input.artifacts.termination == Termination::MaxIterations && !oscillating {
                (OptimizerParam::MaxIterations, (opt.max_iterations as f64 * MAX_ITERATION_GROWTH).ceil())
            } else {
                (OptimizerParam::MoveLimit, 0.5 * opt.move_limit)
            };
            directive(
                DirectiveTarget::Planner,
                DirectiveAction::AdjustOptimizer { param, value },
                format!("not converged ({detail}); setting {param:?} to {value}"),
                origin,
            )
        }
        Criterion::DesignQuality => {
            let action = match quality_issue(&v.metrics, input.thresholds) {
                Some(QualityIssue::Checkerboard | QualityIssue::Disconnected) => {
                    DirectiveAction::IncreaseRMin { factor: R_MIN_GROWTH }
                }
                Some(QualityIssue::Gray) | None => DirectiveAction::SteepenBetaSchedule,
            };
            directive(DirectiveTarget::Planner, action, format!("design quality: {detail}"), origin)
        }
    };
    Route::Refine(d)
}
