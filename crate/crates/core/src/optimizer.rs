//! Design updates (OC, MMA) and the optimization loop driver.

mod history;
mod mma;
mod oc;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{build_mesh, FemError, FemModel, FemSolution, GlobalSystem};
use crate::plan::RunPlan;
use crate::problem::{BetaBreakpoint, ConstraintKind, ObjectiveKind, OptimizerMethod, ProblemSpec, StressParams};
use crate::regularization::{build_filter, continuation_step, DensityChain, FilterOperator};
use crate::sensitivity::{
    compliance_gradient, stress_pnorm_gradient, volume_fraction, volume_gradient,
};

pub use history::{HistoryCsvError, IterationRecord, OptimizationHistory, Termination};
pub use mma::{mma_update, MmaInput, MmaState, MmaStep};
pub use oc::{oc_update, VolumeMap};

/// Relative objective change over the window that counts as converged.
pub const OBJECTIVE_WINDOW_TOLERANCE: f64 = 1e-4;
/// Largest scaled constraint value `g` still treated as feasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UpdateError {
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    BisectionFailed(String),
    #[error("{0}")]
    DualFailed(String),
}

/// Kernel failure captured in an [`OptimizationResult`]; the message is the
/// diagnostic the reviewer reads.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum KernelError {
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("linear solver non-convergence: {0}")]
    LinearSolverNonConvergence(String),
    #[error("non-finite objective: {0}")]
    NonFiniteObjective(String),
    #[error("update failure: {0}")]
    UpdateFailure(String),
    #[error("bisection failure: {0}")]
    BisectionFailure(String),
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

impl KernelError {
    pub fn kind(&self) -> &'static str {
        match self {
            KernelError::SingularSystem(_) => "singular_system",
            KernelError::LinearSolverNonConvergence(_) => "linear_solver_non_convergence",
            KernelError::NonFiniteObjective(_) => "non_finite_objective",
            KernelError::UpdateFailure(_) => "update_failure",
            KernelError::BisectionFailure(_) => "bisection_failure",
            KernelError::DegenerateDomain(_) => "degenerate_domain",
            KernelError::InvalidPlan(_) => "invalid_plan",
        }
    }
}

impl From<FemError> for KernelError {
    fn from(e: FemError) -> Self {
        let msg = e.to_string();
        match e {
            FemError::DegenerateDomain(_) => KernelError::DegenerateDomain(msg),
            FemError::SingularSystem(_) => KernelError::SingularSystem(msg),
            FemError::NotConverged { .. } => KernelError::LinearSolverNonConvergence(msg),
            FemError::NonFinite(_) => KernelError::NonFiniteObjective(msg),
            FemError::LengthMismatch { .. } => KernelError::InvalidPlan(msg),
        }
    }
}

impl From<UpdateError> for KernelError {
    fn from(e: UpdateError) -> Self {
        match e {
            UpdateError::NonFinite(m) => KernelError::NonFiniteObjective(m),
            UpdateError::BisectionFailed(m) => KernelError::BisectionFailure(m),
            UpdateError::Degenerate(m) | UpdateError::DualFailed(m) => KernelError::UpdateFailure(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub rho: Vec<f64>,
    pub rho_tilde: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub active: Vec<bool>,
    pub nx: usize,
    pub ny: usize,
    pub history: OptimizationHistory,
    pub solution: Option<FemSolution>,
    pub spec: ProblemSpec,
    pub error: Option<KernelError>,
    /// Objective magnitude at iteration 1, used to normalize the objective.
    pub objective_scale: f64,
    /// Schedule actually followed, after stall-triggered β advances.
    pub effective_schedule: Vec<BetaBreakpoint>,
    pub log: Vec<String>,
}

impl OptimizationResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn final_volume(&self) -> f64 {
        let (s, n) = self
            .rho_bar
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        s / n.max(1) as f64
    }
}

struct Evaluation {
    chain: DensityChain,
    solution: FemSolution,
    objective: f64,
    objective_grad: Vec<f64>,
    constraint_values: Vec<f64>,
    /// Scaled constraints `gᵢ ≤ 0` and their gradients.
    g: Vec<f64>,
    dg: Vec<Vec<f64>>,
    volume_grad: Vec<f64>,
    clamped: usize,
}

struct Kernel<'a> {
    spec: &'a ProblemSpec,
    model: FemModel,
    filter: FilterOperator,
    stress: StressParams,
}

impl Kernel<'_> {
    fn stress_gradient(
        &self,
        solution: &FemSolution,
        system: &GlobalSystem,
        chain: &DensityChain,
    ) -> Result<(f64, Vec<f64>, usize), KernelError> {
        let adj =
            stress_pnorm_gradient(&self.model, solution, system, chain, &self.filter, &self.spec.simp, &self.stress)?;
        Ok((adj.phi_value, adj.gradient, adj.clamped_elements))
    }

    fn evaluate(&self, rho: &[f64], beta: f64) -> Result<Evaluation, KernelError> {
        let chain = DensityChain::evaluate(&self.filter, rho, beta, self.spec.regularization.eta);
        let (solution, system) = self.model.solve(&chain.rho_bar, &self.spec.simp)?;
        let mut clamped = 0;
        let (objective, objective_grad) = match self.spec.objective.kind {
            ObjectiveKind::Compliance => {
                let adj = compliance_gradient(&self.model, &solution, &chain, &self.filter, &self.spec.simp);
                (adj.phi_value, adj.gradient)
            }
            ObjectiveKind::PnormStress => {
                let (phi, grad, c) = self.stress_gradient(&solution, &system, &chain)?;
                clamped += c;
                (phi, grad)
            }
        };
        if !objective.is_finite() || objective_grad.iter().any(|g| !g.is_finite()) {
            return Err(KernelError::NonFiniteObjective(format!(
                "objective {objective} or its gradient is not finite at beta {beta}"
            )));
        }
        let volume_grad = volume_gradient(&self.model, &chain, &self.filter);
        let mut constraint_values = Vec::new();
        let mut g = Vec::new();
        let mut dg = Vec::new();
        for c in &self.spec.constraints {
            match c.kind {
                ConstraintKind::VolumeFraction => {
                    let v = volume_fraction(&self.model, &chain.rho_bar);
                    constraint_values.push(v);
                    g.push(v / c.bound - 1.0);
                    dg.push(volume_grad.iter().map(|d| d / c.bound).collect());
                }
                ConstraintKind::VonMisesStress => {
                    let (phi, grad, cl) = if self.spec.objective.kind == ObjectiveKind::PnormStress {
                        (objective, objective_grad.clone(), 0)
                    } else {
                        self.stress_gradient(&solution, &system, &chain)?
                    };
                    clamped += cl;
                    constraint_values.push(phi);
                    g.push(phi / c.bound - 1.0);
                    dg.push(grad.iter().map(|d| d / c.bound).collect());
                }
            }
        }
        Ok(Evaluation { chain, solution, objective, objective_grad, constraint_values, g, dg, volume_grad, clamped })
    }
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pulls every breakpoint after `iteration` earlier so the next one lands on
/// `iteration + 1`.
fn advance_schedule(schedule: &mut [BetaBreakpoint], iteration: usize) -> bool {
    let Some(next) = schedule.iter().position(|b| b.iteration > iteration) else {
        return false;
    };
    let shift = schedule[next].iteration - (iteration + 1);
    for b in &mut schedule[next..] {
        b.iteration -= shift;
    }
    true
}

/// Runs the filter → project → solve → sensitivity → update loop described by
/// `plan`. Kernel failures end the run with `solver_failure` and are stored in
/// the result together with the partial history.
/// Amplitude of the seeded perturbation of the initial design.
pub const SEED_PERTURBATION: f64 = 0.01;

/// Uniform start at `value` on active elements. A non-zero `seed` adds a
/// reproducible perturbation of ±[`SEED_PERTURBATION`] with zero mean over
/// the active elements.
pub fn initial_design(active: &[bool], value: f64, seed: u64) -> Vec<f64> {
    let mut rho: Vec<f64> = active.iter().map(|&a| if a { value } else { 0.0 }).collect();
    if seed == 0 {
        return rho;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = active.iter().map(|_| rng.random_range(-SEED_PERTURBATION..SEED_PERTURBATION)).collect();
    let n_active = active.iter().filter(|&&a| a).count().max(1);
    let mean = active.iter().zip(&noise).filter(|(a, _)| **a).map(|(_, d)| d).sum::<f64>() / n_active as f64;
    for ((r, &a), d) in rho.iter_mut().zip(active).zip(&noise) {
        if a {
            *r = (*r + d - mean).clamp(0.0, 1.0);
        }
    }
    rho
}

pub fn run_optimization(plan: &RunPlan) -> OptimizationResult {
    let spec = &plan.spec;
    let n = spec.geometry.nx * spec.geometry.ny;
    let mut schedule = spec.regularization.beta_schedule.clone();
    let mut result = OptimizationResult {
        rho: vec![0.0; n],
        rho_tilde: vec![0.0; n],
        rho_bar: vec![0.0; n],
        active: vec![true; n],
        nx: spec.geometry.nx,
        ny: spec.geometry.ny,
        history: OptimizationHistory { records: Vec::new(), termination: Termination::SolverFailure },
        solution: None,
        spec: spec.clone(),
        error: None,
        objective_scale: 1.0,
        effective_schedule: schedule.clone(),
        log: Vec::new(),
    };
    if let Err(e) = plan.validate() {
        result.error = Some(KernelError::InvalidPlan(e.to_string()));
        return result;
    }

    let setup = build_mesh(&spec.geometry).and_then(|mesh| {
        let filter = build_filter(&mesh, spec.regularization.r_min);
        FemModel::new(mesh, &spec.supports, &spec.loads, &spec.simp, plan.solver.linear_solver)
            .map(|model| (model, filter))
    });
    let (model, filter) = match setup {
        Ok(x) => x,
        Err(e) => {
            let e = KernelError::from(e);
            result.log.push(format!("setup failed: {e}"));
            result.error = Some(e);
            return result;
        }
    };
    let active = model.mesh().active_mask().to_vec();
    result.active = active.clone();
    let kernel = Kernel { spec, model, filter, stress: spec.stress.unwrap_or_default() };

    let opt = &spec.optimizer;
    let volfrac = spec.volume_bound();
    let mut rho = initial_design(&active, spec.initial_density(), plan.seed);
    let active_idx: Vec<usize> = (0..n).filter(|&e| active[e]).collect();
    let mut mma = MmaState::default();
    let mut last_beta = f64::NAN;
    let mut stage_start = 1;
    let mut clamp_reported = false;

    for k in 1..=opt.max_iterations {
        let started = Instant::now();
        let beta = continuation_step(k, &schedule);
        if beta != last_beta {
            if k > 1 {
                result.log.push(format!("iteration {k}: beta -> {beta}"));
            }
            last_beta = beta;
            stage_start = k;
        }
        let eval = match kernel.evaluate(&rho, beta) {
            Ok(ev) => ev,
            Err(e) => {
                result.log.push(format!("iteration {k}: {e}"));
                result.error = Some(e);
                break;
            }
        };
        if eval.clamped > 0 && !clamp_reported {
            result.log.push(format!(
                "iteration {k}: relaxation clamp active on {} elements (rho_bar < 1e-4)",
                eval.clamped
            ));
            clamp_reported = true;
        }
        if k == 1 {
            result.objective_scale = if eval.objective.abs() > 0.0 { eval.objective.abs() } else { 1.0 };
            result.log.push(format!("objective scale {:e}", result.objective_scale));
        }
        let scale = result.objective_scale;

        let update = match opt.method {
            OptimizerMethod::Oc => {
                let map = VolumeMap {
                    filter: &kernel.filter,
                    active: &active,
                    beta,
                    eta: spec.regularization.eta,
                };
                let dc: Vec<f64> = eval.objective_grad.iter().map(|g| g / scale).collect();
                oc_update(
                    &rho,
                    &dc,
                    &eval.volume_grad,
                    volfrac.unwrap_or(0.5),
                    opt.move_limit,
                    &map,
                    plan.solver.volume_tolerance,
                )
            }
            OptimizerMethod::Mma => {
                let x: Vec<f64> = active_idx.iter().map(|&e| rho[e]).collect();
                let df0: Vec<f64> = active_idx.iter().map(|&e| eval.objective_grad[e] / scale).collect();
                let dg: Vec<Vec<f64>> =
                    eval.dg.iter().map(|row| active_idx.iter().map(|&e| row[e]).collect()).collect();
                let input = MmaInput { f0: eval.objective / scale, df0: &df0, g: &eval.g, dg: &dg };
                let lo = vec![0.0; x.len()];
                let hi = vec![1.0; x.len()];
                mma_update(&x, &input, &lo, &hi, &mut mma, opt.move_limit).map(|step| {
                    let mut next = rho.clone();
                    for (i, &e) in active_idx.iter().enumerate() {
                        next[e] = step.x[i];
                    }
                    next
                })
            }
        };

        result.rho = rho.clone();
        result.rho_tilde = eval.chain.rho_tilde.clone();
        result.rho_bar = eval.chain.rho_bar.clone();
        result.solution = Some(eval.solution);

        let next = match update {
            Ok(x) => x,
            Err(e) => {
                let e = KernelError::from(e);
                result.log.push(format!("iteration {k}: {e}"));
                result.error = Some(e);
                // record the evaluated iterate before aborting
                result.history.records.push(IterationRecord {
                    iteration: k,
                    objective: eval.objective,
                    constraints: eval.constraint_values,
                    change: 0.0,
                    beta,
                    ms: if plan.solver.wall_clock { started.elapsed().as_millis() as u64 } else { 0 },
                });
                break;
            }
        };
        let change = max_change(&next, &rho);
        let record = IterationRecord {
            iteration: k,
            objective: eval.objective,
            constraints: eval.constraint_values.clone(),
            change,
            beta,
            ms: if plan.solver.wall_clock { started.elapsed().as_millis() as u64 } else { 0 },
        };
        result.log.push(format!(
            "it {k:4} obj {:.6e} cons [{}] change {:.4} beta {}",
            record.objective,
            record.constraints.iter().map(|c| format!("{c:.5}")).collect::<Vec<_>>().join(", "),
            change,
            beta
        ));
        result.history.records.push(record);

        let feasible = eval.g.iter().all(|&g| g <= FEASIBILITY_TOLERANCE);
        let window_ok = k >= stage_start + opt.objective_window && {
            let recs = &result.history.records;
            let now = recs[k - 1].objective;
            let then = recs[k - 1 - opt.objective_window].objective;
            (now - then).abs() <= OBJECTIVE_WINDOW_TOLERANCE * now.abs().max(f64::MIN_POSITIVE)
        };
        let change_ok = change < opt.change_tolerance;
        let at_final_beta = beta >= schedule.last().map_or(beta, |b| b.beta);

        if at_final_beta && change_ok {
            result.history.termination = Termination::ConvergedChangeTol;
            return result;
        }
        if at_final_beta && window_ok && feasible {
            result.history.termination = Termination::ConvergedObjectiveWindow;
            return result;
        }
        if !at_final_beta && (change_ok || (window_ok && feasible)) && advance_schedule(&mut schedule, k) {
            result.log.push(format!("iteration {k}: stage converged, advancing beta schedule"));
            result.effective_schedule = schedule.clone();
        }
        if k == opt.max_iterations {
            result.history.termination = Termination::MaxIterations;
            return result;
        }
        rho = next;
    }
    result.history.termination = Termination::SolverFailure;
    result
}
