//! Solver configuration emitted by the planner and consumed by
//! [`run_optimization`](crate::optimizer::run_optimization).

use serde::{Deserialize, Serialize};

use crate::fem::LinearSolverSettings;
use crate::problem::{ConstraintKind, ObjectiveKind, OptimizerMethod, ProblemSpec, SpecError};

/// Workflow stages every plan covers, in execution order.
pub const WORKFLOW_STAGES: [&str; 8] =
    ["mesh", "boundary_conditions", "filter", "projection_schedule", "solve", "sensitivity", "update", "loop"];

pub const DEFAULT_VOLUME_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTask {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub linear_solver: LinearSolverSettings,
    /// Allowed gap between the projected volume and its bound after an OC step.
    pub volume_tolerance: f64,
    /// Record wall-clock milliseconds per iteration; otherwise `ms` is 0 so
    /// histories are reproducible byte for byte.
    pub wall_clock: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { linear_solver: LinearSolverSettings::Direct, volume_tolerance: DEFAULT_VOLUME_TOLERANCE, wall_clock: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub tasks: Vec<PlanTask>,
    /// Parameter snapshot: the spec with every directive override applied.
    pub spec: ProblemSpec,
    pub solver: SolverConfig,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("task list must cover {expected:?} exactly once in order, found {found:?}")]
    Tasks { expected: Vec<String>, found: Vec<String> },
    #[error("optimality criteria only handles compliance with volume constraints")]
    UpdateScheme,
    #[error("invalid solver configuration: {0}")]
    Solver(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

fn task(name: &str, inputs: &[&str], outputs: &[&str]) -> PlanTask {
    PlanTask {
        name: name.to_string(),
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Update scheme the planner assigns: OC only for compliance under volume
/// constraints, MMA otherwise.
pub fn choose_method(spec: &ProblemSpec) -> OptimizerMethod {
    let volume_only = spec.constraints.iter().all(|c| c.kind == ConstraintKind::VolumeFraction);
    if spec.objective.kind == ObjectiveKind::Compliance && volume_only && spec.constraints.len() == 1 {
        OptimizerMethod::Oc
    } else {
        OptimizerMethod::Mma
    }
}

impl RunPlan {
    pub fn new(spec: ProblemSpec, solver: SolverConfig, seed: u64) -> Self {
        let needs_stress = spec.objective.kind == ObjectiveKind::PnormStress
            || spec.constraints.iter().any(|c| c.kind == ConstraintKind::VonMisesStress);
        let sensitivity_out: &[&str] = if needs_stress {
            &["stress_pnorm_adjoint", "volume_gradient"]
        } else {
            &["compliance_adjoint", "volume_gradient"]
        };
        let update = match spec.optimizer.method {
            OptimizerMethod::Oc => "oc_update",
            OptimizerMethod::Mma => "mma_update",
        };
        let tasks = vec![
            task("mesh", &["geometry"], &["structured_mesh"]),
            task("boundary_conditions", &["structured_mesh", "supports", "loads"], &["fixed_dofs", "load_vector"]),
            task("filter", &["structured_mesh", "regularization.r_min"], &["filter_operator"]),
            task("projection_schedule", &["regularization.eta", "regularization.beta_schedule"], &["beta_sequence"]),
            task("solve", &["filter_operator", "beta_sequence", "simp", "load_vector"], &["fem_solution"]),
            task("sensitivity", &["fem_solution", "objective", "constraints"], sensitivity_out),
            task("update", &["optimizer.move_limit", "constraints"], &[update]),
            task(
                "loop",
                &["optimizer.max_iterations", "optimizer.change_tolerance", "optimizer.objective_window"],
                &["history", "final_density"],
            ),
        ];
        Self { tasks, spec, solver, seed }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let found: Vec<String> = self.tasks.iter().map(|t| t.name.clone()).collect();
        if found.iter().ne(WORKFLOW_STAGES.iter()) {
            return Err(PlanError::Tasks { expected: WORKFLOW_STAGES.map(String::from).to_vec(), found });
        }
        self.spec.validate()?;
        if self.spec.optimizer.method == OptimizerMethod::Oc && choose_method(&self.spec) != OptimizerMethod::Oc {
            return Err(PlanError::UpdateScheme);
        }
        if !(self.solver.volume_tolerance > 0.0 && self.solver.volume_tolerance < 1.0) {
            return Err(PlanError::Solver(format!("volume tolerance {}", self.solver.volume_tolerance)));
        }
        if let LinearSolverSettings::Iterative { max_iterations: 0 } = self.solver.linear_solver {
            return Err(PlanError::Solver("iterative solver needs at least one iteration".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}
