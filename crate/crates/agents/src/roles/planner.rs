//! Planner: freezes the spec plus directive overrides into a run plan.

use topopt_core::fem::LinearSolverSettings;
use topopt_core::plan::{choose_method, RunPlan, SolverConfig};
use topopt_core::problem::{BetaBreakpoint, ProblemSpec};

use crate::memory::{DirectiveAction, OptimizerParam, RefinementDirective, RunCorrection};

pub const BETA_CAP: f64 = 128.0;
pub const VOLUME_TOLERANCE_STEP: f64 = 10.0;

/// Halves the breakpoint spacing and doubles β at every breakpoint up to
/// [`BETA_CAP`], starting from the first breakpoint.
pub fn steepen_schedule(schedule: &[BetaBreakpoint]) -> Vec<BetaBreakpoint> {
    let first = schedule.first().copied().unwrap_or(BetaBreakpoint { iteration: 0, beta: 1.0 });
    let spacing = match schedule {
        [a, b, ..] => b.iteration - a.iteration,
        _ => 50,
    };
    let step = (spacing / 2).max(1);
    let mut out = vec![first];
    let (mut iteration, mut beta) = (first.iteration, first.beta);
    while beta < BETA_CAP {
        iteration += step;
        beta = (beta * 2.0).min(BETA_CAP);
        out.push(BetaBreakpoint { iteration, beta });
    }
    out
}

/// Applies one planner or runner override.
pub fn apply_override(spec: &mut ProblemSpec, solver: &mut SolverConfig, action: &DirectiveAction) {
    match *action {
        DirectiveAction::IncreaseRMin { factor } => spec.regularization.r_min *= factor,
        DirectiveAction::SteepenBetaSchedule => {
            spec.regularization.beta_schedule = steepen_schedule(&spec.regularization.beta_schedule)
        }
        DirectiveAction::AdjustOptimizer { param: OptimizerParam::MoveLimit, value } => spec.optimizer.move_limit = value,
        DirectiveAction::AdjustOptimizer { param: OptimizerParam::MaxIterations, value } => {
            spec.optimizer.max_iterations = value.round().max(1.0) as usize
        }
        DirectiveAction::RetryWith { correction: RunCorrection::HalveMoveLimit } => spec.optimizer.move_limit *= 0.5,
        DirectiveAction::RetryWith { correction: RunCorrection::DirectSolver } => {
            solver.linear_solver = LinearSolverSettings::Direct
        }
        DirectiveAction::RetryWith { correction: RunCorrection::RelaxVolumeTolerance } => {
            solver.volume_tolerance = (solver.volume_tolerance * VOLUME_TOLERANCE_STEP).min(0.1)
        }
        DirectiveAction::Reformulate { .. } | DirectiveAction::FixBc | DirectiveAction::ChangeConstraint { .. } => {}
    }
}

/// Plan for `spec` with every override in `directives` applied in order.
/// The update scheme follows the objective and constraint kinds.
pub fn planner_plan(spec: &ProblemSpec, directives: &[RefinementDirective], base: SolverConfig, seed: u64) -> RunPlan {
    let mut snapshot = spec.clone();
    let mut solver = base;
    for d in directives {
        apply_override(&mut snapshot, &mut solver, &d.action);
    }
    snapshot.optimizer.method = choose_method(&snapshot);
    RunPlan::new(snapshot, solver, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{Criterion, DirectiveOrigin, DirectiveTarget};
    use proptest::prelude::*;
    use topopt_core::plan::WORKFLOW_STAGES;
    use topopt_core::problem::{builtin_benchmark, default_beta_schedule, Benchmark, OptimizerMethod};

    fn directive(action: DirectiveAction) -> RefinementDirective {
        RefinementDirective {
            target: DirectiveTarget::Planner,
            action,
            rationale: String::new(),
            origin: DirectiveOrigin::Verdict { verdict: 0, criterion: Criterion::DesignQuality },
        }
    }

    #[test]
    fn update_scheme_follows_objective() {
        let p = planner_plan(&builtin_benchmark(Benchmark::Cantilever), &[], SolverConfig::default(), 0);
        assert_eq!(p.spec.optimizer.method, OptimizerMethod::Oc);
        assert_eq!(p.tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), WORKFLOW_STAGES.to_vec());
        let p = planner_plan(&builtin_benchmark(Benchmark::LBracketStress), &[], SolverConfig::default(), 0);
        assert_eq!(p.spec.optimizer.method, OptimizerMethod::Mma);
        assert!(p.tasks[5].outputs.contains(&"stress_pnorm_adjoint".to_string()));
        p.validate().unwrap();
    }

    #[test]
    fn pending_r_min_increase_is_in_snapshot() {
        let spec = builtin_benchmark(Benchmark::MbbMidRight);
        let p = planner_plan(
            &spec,
            &[directive(DirectiveAction::IncreaseRMin { factor: 1.5 })],
            SolverConfig::default(),
            0,
        );
        assert!((p.spec.regularization.r_min - 1.5 * spec.regularization.r_min).abs() < 1e-12);
    }

    #[test]
    fn runner_corrections_reach_solver() {
        let base = SolverConfig { linear_solver: LinearSolverSettings::Iterative { max_iterations: 5 }, ..Default::default() };
        let p = planner_plan(
            &builtin_benchmark(Benchmark::Cantilever),
            &[
                directive(DirectiveAction::RetryWith { correction: RunCorrection::HalveMoveLimit }),
                directive(DirectiveAction::RetryWith { correction: RunCorrection::DirectSolver }),
                directive(DirectiveAction::RetryWith { correction: RunCorrection::RelaxVolumeTolerance }),
            ],
            base,
            0,
        );
        assert_eq!(p.solver.linear_solver, LinearSolverSettings::Direct);
        assert!((p.solver.volume_tolerance - 1e-3).abs() < 1e-15);
        assert!((p.spec.optimizer.move_limit - 0.1).abs() < 1e-15);
    }

    #[test]
    fn steepened_default_schedule() {
        let s = steepen_schedule(&default_beta_schedule());
        assert_eq!(s.first().unwrap().iteration, 0);
        assert_eq!(s[1].iteration, 25);
        assert_eq!(s.last().unwrap().beta, BETA_CAP);
        let gentle = [BetaBreakpoint { iteration: 0, beta: 1.0 }, BetaBreakpoint { iteration: 100, beta: 2.0 }];
        let s = steepen_schedule(&gentle);
        assert_eq!(s.len(), 8);
        assert_eq!(s[1], BetaBreakpoint { iteration: 50, beta: 2.0 });
        assert_eq!(s[7], BetaBreakpoint { iteration: 350, beta: 128.0 });
    }

    proptest! {
        #[test]
        fn steepening_keeps_schedule_increasing(spacing in 1usize..200, start in 0usize..50, beta0 in 1.0f64..64.0) {
            let s = steepen_schedule(&[
                BetaBreakpoint { iteration: start, beta: beta0 },
                BetaBreakpoint { iteration: start + spacing, beta: beta0 * 2.0 },
            ]);
            prop_assert!(s.windows(2).all(|w| w[1].iteration > w[0].iteration && w[1].beta >= w[0].beta));
            prop_assert!(s.last().unwrap().beta >= BETA_CAP.min(beta0));
            prop_assert!(s.iter().all(|b| b.beta <= BETA_CAP.max(beta0)));
        }
    }
}
