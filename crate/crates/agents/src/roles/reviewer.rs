//! Reviewer: maps kernel failures to corrective retries.

use std::collections::BTreeMap;

use serde::Deserialize;
use topopt_core::fem::LinearSolverSettings;
use topopt_core::optimizer::KernelError;
use topopt_core::plan::RunPlan;

use crate::events::Diagnosis;
use crate::gateway::{CallRecord, GatewayError, PersonaHandle, Schema, SchemaError};
use crate::memory::{allowed_pair, DirectiveAction, DirectiveOrigin, DirectiveTarget, RefinementDirective, RunArtifacts, RunCorrection};

/// Next step for a failure, given the corrections already tried against the
/// current failure streak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Remedy {
    Retry(RunCorrection),
    RecheckBoundaryConditions,
    GiveUp,
}

pub fn remedy(error: &KernelError, plan: &RunPlan, tried: &[RunCorrection]) -> Remedy {
    use RunCorrection as C;
    match error {
        KernelError::SingularSystem(_) => Remedy::RecheckBoundaryConditions,
        KernelError::LinearSolverNonConvergence(_) => match plan.solver.linear_solver {
            LinearSolverSettings::Iterative { .. } if tried.contains(&C::HalveMoveLimit) => Remedy::Retry(C::DirectSolver),
            _ => Remedy::Retry(C::HalveMoveLimit),
        },
        KernelError::NonFiniteObjective(_) | KernelError::UpdateFailure(_) => Remedy::Retry(C::HalveMoveLimit),
        KernelError::BisectionFailure(_) => Remedy::Retry(C::RelaxVolumeTolerance),
        KernelError::DegenerateDomain(_) | KernelError::InvalidPlan(_) => Remedy::GiveUp,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReviewerReply {
    Retry { target: DirectiveTarget, action: DirectiveAction, rationale: String },
    GiveUp { reason: String },
}

fn check_reply(reply: &ReviewerReply) -> Result<(), SchemaError> {
    match reply {
        ReviewerReply::Retry { target, action, .. } => {
            let ok = matches!(target, DirectiveTarget::Runner | DirectiveTarget::Validator) && allowed_pair(*target, action);
            if ok {
                Ok(())
            } else {
                Err(SchemaError::new(Some("action".into()), format!("{target:?} cannot take {}", action.name())))
            }
        }
        ReviewerReply::GiveUp { .. } => Ok(()),
    }
}

/// Diagnoses the failed run `artifact` (index into memory). `tried` lists
/// the runner corrections issued since the last successful run.
pub fn reviewer_diagnose(
    artifacts: &RunArtifacts,
    artifact: usize,
    plan: &RunPlan,
    history_tail: &str,
    tried: &[RunCorrection],
    persona: &mut PersonaHandle,
) -> Result<(Diagnosis, Option<CallRecord>), GatewayError> {
    let Some(error) = &artifacts.error else {
        return Ok((Diagnosis::GiveUp { reason: "run did not fail".into() }, None));
    };
    let origin = DirectiveOrigin::Run { artifact, error_kind: error.kind().to_string() };
    if persona.is_deterministic() {
        let diagnosis = match remedy(error, plan, tried) {
            Remedy::Retry(correction) => Diagnosis::Retry {
                directive: RefinementDirective {
                    target: DirectiveTarget::Runner,
                    action: DirectiveAction::RetryWith { correction },
                    rationale: format!("{error}; retrying with {correction:?}"),
                    origin,
                },
            },
            Remedy::RecheckBoundaryConditions => Diagnosis::Retry {
                directive: RefinementDirective {
                    target: DirectiveTarget::Validator,
                    action: DirectiveAction::FixBc,
                    rationale: format!("{error}; supports or loads are likely misplaced"),
                    origin,
                },
            },
            Remedy::GiveUp => Diagnosis::GiveUp { reason: format!("no correction for {error}") },
        };
        return Ok((diagnosis, None));
    }
    let inputs = BTreeMap::from([
        ("error".to_string(), error.to_string()),
        ("plan".to_string(), plan.to_json()),
        ("history_tail".to_string(), history_tail.to_string()),
        ("previous_corrections".to_string(), serde_json::to_string(tried).expect("corrections serialize")),
    ]);
    let (reply, call) = persona.ask_checked::<ReviewerReply>(&inputs, Schema::RefinementDirective, &[], check_reply)?;
    let diagnosis = match reply {
        ReviewerReply::Retry { target, action, rationale } => {
            Diagnosis::Retry { directive: RefinementDirective { target, action, rationale, origin } }
        }
        ReviewerReply::GiveUp { reason } => Diagnosis::GiveUp { reason },
    };
    Ok((diagnosis, Some(call)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Agent;
    use topopt_core::optimizer::Termination;
    use topopt_core::plan::SolverConfig;
    use topopt_core::problem::{builtin_benchmark, Benchmark};

    fn plan(solver: LinearSolverSettings) -> RunPlan {
        RunPlan::new(
            builtin_benchmark(Benchmark::Cantilever),
            SolverConfig { linear_solver: solver, ..Default::default() },
            0,
        )
    }

    fn failed(error: KernelError) -> RunArtifacts {
        RunArtifacts {
            run: 1,
            plan: 0,
            termination: Termination::SolverFailure,
            iterations: 0,
            final_objective: None,
            final_volume: 0.4,
            error: Some(error),
            density_image: "density_v1.png".into(),
            convergence_plot: "convergence_v1.png".into(),
            history: "history_v1.csv".into(),
            log: "run_v1.log".into(),
        }
    }

    fn det() -> PersonaHandle {
        PersonaHandle::deterministic(Agent::Reviewer, crate::prompts::reviewer())
    }

    fn action(d: &Diagnosis) -> Option<(DirectiveTarget, DirectiveAction)> {
        match d {
            Diagnosis::Retry { directive } => Some((directive.target, directive.action.clone())),
            Diagnosis::GiveUp { .. } => None,
        }
    }

    #[test]
    fn non_finite_halves_move_limit() {
        let (d, _) = reviewer_diagnose(
            &failed(KernelError::NonFiniteObjective("nan".into())),
            0,
            &plan(LinearSolverSettings::Direct),
            "",
            &[],
            &mut det(),
        )
        .unwrap();
        assert_eq!(
            action(&d),
            Some((DirectiveTarget::Runner, DirectiveAction::RetryWith { correction: RunCorrection::HalveMoveLimit }))
        );
    }

    #[test]
    fn singular_system_goes_to_validator() {
        let (d, _) = reviewer_diagnose(
            &failed(KernelError::SingularSystem("zero pivot".into())),
            0,
            &plan(LinearSolverSettings::Direct),
            "",
            &[],
            &mut det(),
        )
        .unwrap();
        assert_eq!(action(&d), Some((DirectiveTarget::Validator, DirectiveAction::FixBc)));
    }

    #[test]
    fn failed_correction_escalates_to_the_next() {
        let cg = plan(LinearSolverSettings::Iterative { max_iterations: 20 });
        let e = KernelError::LinearSolverNonConvergence("cg".into());
        assert_eq!(remedy(&e, &cg, &[]), Remedy::Retry(RunCorrection::HalveMoveLimit));
        assert_eq!(remedy(&e, &cg, &[RunCorrection::HalveMoveLimit]), Remedy::Retry(RunCorrection::DirectSolver));
        assert_eq!(remedy(&e, &plan(LinearSolverSettings::Direct), &[]), Remedy::Retry(RunCorrection::HalveMoveLimit));
    }

    #[test]
    fn bisection_relaxes_tolerance_and_degenerate_gives_up() {
        let p = plan(LinearSolverSettings::Direct);
        assert_eq!(
            remedy(&KernelError::BisectionFailure("b".into()), &p, &[]),
            Remedy::Retry(RunCorrection::RelaxVolumeTolerance)
        );
        assert_eq!(remedy(&KernelError::DegenerateDomain("d".into()), &p, &[]), Remedy::GiveUp);
    }

    #[test]
    fn llm_reply_must_use_allowed_pairs() {
        let bad = r#"{"outcome":"retry","target":"runner","action":{"kind":"steepen_beta_schedule"},"rationale":"x"}"#;
        let good = r#"{"outcome":"retry","target":"runner","action":{"kind":"retry_with","correction":"direct_solver"},"rationale":"x"}"#;
        let mut mock = PersonaHandle::mock(Agent::Reviewer, crate::prompts::reviewer(), [bad.into(), good.into()]);
        let (d, call) = reviewer_diagnose(
            &failed(KernelError::LinearSolverNonConvergence("cg".into())),
            3,
            &plan(LinearSolverSettings::Direct),
            "",
            &[],
            &mut mock,
        )
        .unwrap();
        assert!(call.unwrap().reasked);
        let Diagnosis::Retry { directive } = d else { panic!("expected retry") };
        assert_eq!(directive.origin, DirectiveOrigin::Run { artifact: 3, error_kind: "linear_solver_non_convergence".into() });
    }
}
