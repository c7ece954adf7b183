//! Scientist: turns the query, escalations and directives into problem specs.

use std::collections::BTreeMap;

use serde::Deserialize;
use topopt_core::fem::build_mesh;
use topopt_core::plan::choose_method;
use topopt_core::problem::{
    builtin_benchmark, default_beta_schedule, default_r_min, ConstraintKind, ConstraintSpec, DomainGeometry,
    LoadRegion, ObjectiveKind, ObjectiveSpec, OptimizerParams, ProblemSpec, Provenance, Rect, RegularizationParams,
    SimpParams, SpecError, StressParams, SupportRegion,
};

use crate::faults::FaultPlan;
use crate::gateway::{CallRecord, GatewayError, PersonaHandle, Schema, SchemaError};
use crate::intent::{extract_intent, IntentError, QueryIntent};
use crate::memory::{DirectiveAction, Finding, FindingCode, RefinementDirective};

/// Feedback keywords the deterministic Scientist understands.
pub const HOLE_KEYWORDS: [&str; 2] = ["hole", "cut-out"];

#[derive(Debug, Clone, Copy)]
pub enum Instruction<'a> {
    Query,
    Escalation(&'a [Finding]),
    Directive(&'a RefinementDirective),
}

impl Instruction<'_> {
    fn describe(&self) -> String {
        match self {
            Instruction::Query => String::new(),
            Instruction::Escalation(findings) => {
                let lines: Vec<String> =
                    findings.iter().map(|f| format!("- {:?} at `{}`: {}", f.code, f.path, f.message)).collect();
                format!("The validator escalated these findings; fix them:\n{}", lines.join("\n"))
            }
            Instruction::Directive(d) => format!(
                "Apply the refinement directive {}: {}",
                serde_json::to_string(&d.action).expect("action serializes"),
                d.rationale
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formulation {
    pub spec: ProblemSpec,
    pub contexts: Vec<String>,
    pub call: Option<CallRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScientistError {
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("{0}")]
    Fault(String),
    #[error("cannot interpret feedback `{0}` without an LLM persona")]
    Feedback(String),
    #[error("no formulation to revise")]
    NothingToRevise,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("revised formulation is invalid: {0}")]
    Invalid(#[from] SpecError),
}

/// Problem document as an LLM returns it: the physical statement is
/// required, numerical blocks fall back to defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFragment {
    pub geometry: DomainGeometry,
    pub supports: Vec<SupportRegion>,
    pub loads: Vec<LoadRegion>,
    pub objective: ObjectiveSpec,
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub simp: Option<SimpParams>,
    #[serde(default)]
    pub regularization: Option<RegularizationParams>,
    #[serde(default)]
    pub stress: Option<StressParams>,
    #[serde(default)]
    pub optimizer: Option<OptimizerParams>,
}

impl SpecFragment {
    pub fn into_spec(self) -> Result<ProblemSpec, SpecError> {
        let regularization = self.regularization.unwrap_or_else(|| RegularizationParams {
            r_min: default_r_min(&self.geometry),
            eta: 0.5,
            beta_schedule: default_beta_schedule(),
        });
        let mut spec = ProblemSpec {
            num_inequality: self.constraints.len(),
            num_equality: 1,
            simp: self.simp.unwrap_or_default(),
            regularization,
            stress: self.stress,
            optimizer: self.optimizer.unwrap_or_else(|| OptimizerParams::defaults_for(self.objective.kind)),
            provenance: Provenance::Scientist,
            geometry: self.geometry,
            supports: self.supports,
            loads: self.loads,
            objective: self.objective,
            constraints: self.constraints,
        };
        sync_stress_and_method(&mut spec);
        spec.validate()?;
        Ok(spec)
    }
}

fn uses_stress(spec: &ProblemSpec) -> bool {
    spec.objective.kind == ObjectiveKind::PnormStress
        || spec.constraints.iter().any(|c| c.kind == ConstraintKind::VonMisesStress)
}

/// Adds or drops the stress block to match the formulation and picks the
/// update scheme for it.
pub fn sync_stress_and_method(spec: &mut ProblemSpec) {
    if uses_stress(spec) {
        spec.stress.get_or_insert_with(StressParams::default);
    } else {
        spec.stress = None;
    }
    spec.num_inequality = spec.constraints.len();
    spec.optimizer.method = choose_method(spec);
}

pub fn set_objective(spec: &mut ProblemSpec, kind: ObjectiveKind) {
    spec.objective.kind = kind;
    sync_stress_and_method(spec);
}

pub fn set_constraint(spec: &mut ProblemSpec, kind: ConstraintKind, bound: f64) {
    spec.constraints = vec![ConstraintSpec { kind, bound }];
    sync_stress_and_method(spec);
}

/// The problem the query asks for, before any injected fault.
pub fn reference_spec(intent: &QueryIntent) -> ProblemSpec {
    let mut spec = match (&intent.embedded, intent.benchmark) {
        (Some(spec), _) => spec.clone(),
        (None, Some(b)) => builtin_benchmark(b),
        (None, None) => unreachable!("intent extraction guarantees a benchmark or an embedded spec"),
    };
    if spec.objective.kind != intent.objective {
        set_objective(&mut spec, intent.objective);
    }
    if let (Some(v), Some(c)) = (
        intent.volume_fraction,
        spec.constraints.iter_mut().find(|c| c.kind == ConstraintKind::VolumeFraction),
    ) {
        c.bound = v;
    }
    spec.provenance = Provenance::Scientist;
    spec
}

fn restore_boundary_conditions(spec: &mut ProblemSpec, reference: &ProblemSpec) {
    spec.loads = reference.loads.clone();
    spec.supports = reference.supports.clone();
}

/// Void square one fifth of the domain on a side, centred on the centroid of
/// the active elements and snapped to element edges.
pub fn add_hole(spec: &ProblemSpec) -> Result<ProblemSpec, SpecError> {
    let mesh = build_mesh(&spec.geometry).map_err(|e| SpecError::Invariant {
        path: "geometry".into(),
        message: e.to_string(),
    })?;
    let (mut cx, mut cy, mut n) = (0.0, 0.0, 0.0);
    for e in (0..mesh.n_elements()).filter(|&e| mesh.is_active(e)) {
        let c = mesh.centroid(e);
        cx += c.x;
        cy += c.y;
        n += 1.0;
    }
    let g = &spec.geometry;
    let (dx, dy) = (g.dx(), g.dy());
    let (hw, hh) = (0.1 * g.width, 0.1 * g.height);
    let snap = |v: f64, step: f64, max: f64| ((v / step).round() * step).clamp(0.0, max);
    let hole = Rect::new(
        snap(cx / n - hw, dx, g.width),
        snap(cy / n - hh, dy, g.height),
        snap(cx / n + hw, dx, g.width),
        snap(cy / n + hh, dy, g.height),
    );
    let mut out = spec.clone();
    out.geometry.void_regions.push(hole);
    out.provenance = Provenance::Scientist;
    out.validate()?;
    Ok(out)
}

fn apply_feedback(spec: &ProblemSpec, comment: &str) -> Result<ProblemSpec, ScientistError> {
    let lower = comment.to_lowercase();
    if HOLE_KEYWORDS.iter().any(|k| lower.contains(k)) {
        return Ok(add_hole(spec)?);
    }
    Err(ScientistError::Feedback(comment.to_string()))
}

fn deterministic(
    query: &str,
    current: Option<&ProblemSpec>,
    instruction: Instruction<'_>,
    faults: &FaultPlan,
) -> Result<ProblemSpec, ScientistError> {
    let intent = extract_intent(query)?;
    let reference = reference_spec(&intent);
    if let Instruction::Query = instruction {
        return faults.corrupt_spec(&reference).map_err(ScientistError::Fault);
    }
    let mut spec = current.ok_or(ScientistError::NothingToRevise)?.clone();
    match instruction {
        Instruction::Query => unreachable!(),
        Instruction::Escalation(findings) => {
            for f in findings {
                match f.code {
                    FindingCode::LoadInVoid | FindingCode::BcError | FindingCode::PointLoadSingularity => {
                        restore_boundary_conditions(&mut spec, &reference)
                    }
                    FindingCode::QueryMismatch => {
                        set_objective(&mut spec, intent.objective);
                        spec.constraints = reference.constraints.clone();
                        sync_stress_and_method(&mut spec);
                    }
                    FindingCode::MissingParam => sync_stress_and_method(&mut spec),
                    FindingCode::AspectRatio | FindingCode::FilterVsMesh => {
                        spec.geometry = reference.geometry.clone();
                        spec.regularization.r_min = reference.regularization.r_min;
                    }
                }
            }
        }
        Instruction::Directive(d) => match &d.action {
            DirectiveAction::Reformulate { comment: Some(c) } => spec = apply_feedback(&spec, c)?,
            DirectiveAction::Reformulate { comment: None } => {
                set_objective(&mut spec, intent.objective);
                spec.constraints = reference.constraints.clone();
                sync_stress_and_method(&mut spec);
                restore_boundary_conditions(&mut spec, &reference);
            }
            DirectiveAction::ChangeConstraint { to, bound } => set_constraint(&mut spec, *to, *bound),
            DirectiveAction::FixBc => restore_boundary_conditions(&mut spec, &reference),
            other => {
                return Err(ScientistError::Invalid(SpecError::InvalidValue {
                    path: "action".into(),
                    message: format!("{} is not a scientist action", other.name()),
                }))
            }
        },
    }
    spec.provenance = Provenance::Scientist;
    spec.validate()?;
    Ok(spec)
}

/// Formulates or revises the problem. Deterministic personas work from
/// keyword intent; LLM personas receive the five-section prompt with the
/// stress context appended for stress queries.
pub fn scientist_formulate(
    query: &str,
    current: Option<&ProblemSpec>,
    instruction: Instruction<'_>,
    memory_summary: &str,
    persona: &mut PersonaHandle,
    faults: &FaultPlan,
) -> Result<Formulation, ScientistError> {
    let inputs = BTreeMap::from([
        ("user_query".to_string(), query.to_string()),
        ("memory".to_string(), memory_summary.to_string()),
        ("instruction".to_string(), instruction.describe()),
    ]);
    let contexts = persona.template.active_contexts(&inputs);
    if persona.is_deterministic() {
        let spec = deterministic(query, current, instruction, faults)?;
        return Ok(Formulation { spec, contexts, call: None });
    }
    let check = |f: &SpecFragment| f.clone().into_spec().map(|_| ()).map_err(SchemaError::from);
    let (fragment, call) = persona.ask_checked::<SpecFragment>(&inputs, Schema::SpecFragment, &[], check)?;
    let spec = fragment.into_spec()?;
    Ok(Formulation { spec, contexts: call.contexts.clone(), call: Some(call) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::Fault;
    use crate::intent::benchmark_query;
    use crate::memory::{DirectiveOrigin, DirectiveTarget, Severity};
    use crate::prompts;
    use topopt_core::problem::{spec_diff, Benchmark, LoadLocation, Point};

    fn det() -> PersonaHandle {
        PersonaHandle::deterministic(crate::events::Agent::Scientist, prompts::scientist())
    }

    fn formulate(query: &str, current: Option<&ProblemSpec>, i: Instruction<'_>, faults: &FaultPlan) -> Formulation {
        scientist_formulate(query, current, i, "{}", &mut det(), faults).unwrap()
    }

    fn directive(action: DirectiveAction) -> RefinementDirective {
        RefinementDirective {
            target: DirectiveTarget::Scientist,
            action,
            rationale: String::new(),
            origin: DirectiveOrigin::Verdict { verdict: 0, criterion: crate::memory::Criterion::FormulationConsistency },
        }
    }

    #[test]
    fn stiffest_cantilever_is_the_builtin() {
        let f = formulate("the stiffest structure: a cantilever", None, Instruction::Query, &FaultPlan::default());
        let mut expected = builtin_benchmark(Benchmark::Cantilever);
        expected.provenance = Provenance::Scientist;
        assert_eq!(f.spec, expected);
        assert!(f.contexts.is_empty());
    }

    #[test]
    fn stress_query_records_context() {
        let f = formulate(benchmark_query(Benchmark::LBracketStress), None, Instruction::Query, &FaultPlan::default());
        assert_eq!(f.contexts, vec!["stress".to_string()]);
        assert_eq!(f.spec.objective.kind, ObjectiveKind::PnormStress);
    }

    #[test]
    fn unknown_query_fails() {
        let err = scientist_formulate("a bridge", None, Instruction::Query, "{}", &mut det(), &FaultPlan::default());
        assert!(matches!(err, Err(ScientistError::Intent(_))));
    }

    #[test]
    fn change_constraint_restores_volume() {
        let q = benchmark_query(Benchmark::LBracketStress);
        let faults = FaultPlan { faults: vec![Fault::WrongConstraint], disabled_checks: vec![] };
        let bad = formulate(q, None, Instruction::Query, &faults).spec;
        assert_eq!(bad.constraints[0].kind, ConstraintKind::VonMisesStress);
        let d = directive(DirectiveAction::ChangeConstraint { to: ConstraintKind::VolumeFraction, bound: 0.4 });
        let fixed = formulate(q, Some(&bad), Instruction::Directive(&d), &faults).spec;
        assert_eq!(fixed.constraints, vec![ConstraintSpec { kind: ConstraintKind::VolumeFraction, bound: 0.4 }]);
        assert!(fixed.stress.is_some());
    }

    #[test]
    fn escalated_void_load_is_moved_back() {
        let q = benchmark_query(Benchmark::LBracketStress);
        let faults = FaultPlan { faults: vec![Fault::LoadInVoid], disabled_checks: vec![] };
        let bad = formulate(q, None, Instruction::Query, &faults).spec;
        let finding = Finding {
            code: FindingCode::LoadInVoid,
            severity: Severity::Escalate,
            path: "loads[0].location".into(),
            message: String::new(),
            correction: None,
        };
        let fixed = formulate(q, Some(&bad), Instruction::Escalation(std::slice::from_ref(&finding)), &faults).spec;
        assert_eq!(fixed.loads[0].location, LoadLocation::Point { x: 1.0, y: 0.4 });
    }

    #[test]
    fn hole_feedback_adds_one_void() {
        let q = benchmark_query(Benchmark::Cantilever);
        let base = formulate(q, None, Instruction::Query, &FaultPlan::default()).spec;
        let d = directive(DirectiveAction::Reformulate { comment: Some("Please add a hole".into()) });
        let holed = formulate(q, Some(&base), Instruction::Directive(&d), &FaultPlan::default()).spec;
        let diff = spec_diff(&base, &holed);
        assert_eq!(diff.len(), 1, "{diff:?}");
        assert_eq!(diff[0].path, "geometry.void_regions");
        let hole = holed.geometry.void_regions[0];
        assert!((hole.width() - 0.4).abs() < 1e-9 && (hole.height() - 0.2).abs() < 1e-9);
        assert!(hole.contains(Point::new(1.0, 0.5)));
    }

    #[test]
    fn other_feedback_needs_llm() {
        let q = benchmark_query(Benchmark::Cantilever);
        let base = formulate(q, None, Instruction::Query, &FaultPlan::default()).spec;
        let d = directive(DirectiveAction::Reformulate { comment: Some("make it prettier".into()) });
        let err = scientist_formulate(q, Some(&base), Instruction::Directive(&d), "{}", &mut det(), &FaultPlan::default());
        assert!(matches!(err, Err(ScientistError::Feedback(_))));
    }

    #[test]
    fn fragment_defaults_are_filled() {
        let full = builtin_benchmark(Benchmark::LBracketStress);
        let mut v = serde_json::to_value(&full).unwrap();
        let obj = v.as_object_mut().unwrap();
        for k in ["simp", "regularization", "stress", "optimizer", "num_inequality", "num_equality", "provenance"] {
            obj.remove(k);
        }
        let mock = PersonaHandle::mock(crate::events::Agent::Scientist, prompts::scientist(), [v.to_string()]);
        let mut mock = mock;
        let f = scientist_formulate(
            benchmark_query(Benchmark::LBracketStress),
            None,
            Instruction::Query,
            "{}",
            &mut mock,
            &FaultPlan::default(),
        )
        .unwrap();
        let mut expected = full;
        expected.provenance = Provenance::Scientist;
        assert_eq!(f.spec, expected);
        assert_eq!(f.contexts, vec!["stress".to_string()]);
        assert!(f.call.is_some());
    }

    #[test]
    fn invalid_fragment_is_reasked() {
        let mut bad = serde_json::to_value(builtin_benchmark(Benchmark::Cantilever)).unwrap();
        bad["constraints"] = serde_json::json!([]);
        bad["num_inequality"] = 0.into();
        let good = serde_json::to_value(builtin_benchmark(Benchmark::Cantilever)).unwrap();
        let strip = |mut v: serde_json::Value| {
            for k in ["num_inequality", "num_equality", "provenance"] {
                v.as_object_mut().unwrap().remove(k);
            }
            v.to_string()
        };
        let mut mock =
            PersonaHandle::mock(crate::events::Agent::Scientist, prompts::scientist(), [strip(bad), strip(good)]);
        let f = scientist_formulate("cantilever", None, Instruction::Query, "{}", &mut mock, &FaultPlan::default())
            .unwrap();
        assert!(f.call.unwrap().reasked);
    }
}
