//! Validator: the fixed pre-run check list and its mechanical corrections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use topopt_core::problem::{LoadDistribution, LoadLocation, LoadRegion, Point, ProblemSpec, Provenance, SpecError, StressParams};

use super::scientist::{set_objective, sync_stress_and_method};
use crate::faults::Check;
use crate::gateway::{CallRecord, GatewayError, PersonaHandle, Schema, SchemaError};
use crate::intent::QueryIntent;
use crate::memory::{Correction, Finding, FindingCode, Severity};

/// Nodes a point load is spread over.
pub const DISTRIBUTED_NODES: usize = 3;
/// Filter radius the filter check raises a too-small radius to, in element sizes.
pub const R_MIN_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingList {
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub call: Option<CallRecord>,
}

impl ValidationReport {
    pub fn escalates(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Escalate)
    }
}

fn finding(code: FindingCode, path: String, message: String, correction: Option<Correction>) -> Finding {
    let severity = if correction.is_some() { Severity::AutoCorrectable } else { Severity::Escalate };
    Finding { code, severity, path, message, correction }
}

fn fmt_point(p: Point) -> String {
    format!("({:.4}, {:.4})", p.x, p.y)
}

/// Runs every enabled check against `spec` as given.
pub fn run_checks(spec: &ProblemSpec, intent: Option<&QueryIntent>, disabled: &[Check]) -> Vec<Finding> {
    let g = &spec.geometry;
    let h = g.element_size();
    let mut out = Vec::new();
    let enabled = |c: Check| !disabled.contains(&c);

    if enabled(Check::Intent) {
        if let Some(intent) = intent.filter(|i| i.objective != spec.objective.kind) {
            out.push(finding(
                FindingCode::QueryMismatch,
                "objective.kind".into(),
                format!("query asks for {:?}, formulation minimizes {:?}", intent.objective, spec.objective.kind),
                Some(Correction::SetObjective { objective: intent.objective }),
            ));
        }
    }

    if enabled(Check::BoundaryConditions) {
        if let Some(intent) = intent {
            for (i, (load, &target)) in spec.loads.iter().zip(&intent.load_points).enumerate() {
                let at = load.location.anchor();
                if at.distance(target) > h && !g.in_void(at) {
                    out.push(finding(
                        FindingCode::BcError,
                        format!("loads[{i}].location"),
                        format!("load at {} but the query places it at {}", fmt_point(at), fmt_point(target)),
                        Some(Correction::MoveLoad { index: i, x: target.x, y: target.y }),
                    ));
                }
            }
        }
        for (i, s) in spec.supports.iter().enumerate() {
            let mid = Point::new(0.5 * (s.start.x + s.end.x), 0.5 * (s.start.y + s.end.y));
            let swallowed = g.void_regions.iter().any(|r| [s.start, mid, s.end].iter().all(|&p| r.contains(p)));
            if swallowed {
                out.push(finding(
                    FindingCode::BcError,
                    format!("supports[{i}]"),
                    "support lies entirely inside a void region".into(),
                    None,
                ));
            }
        }
    }

    if enabled(Check::MissingParams) {
        let needs = spec.objective.kind == topopt_core::problem::ObjectiveKind::PnormStress
            || spec.constraints.iter().any(|c| c.kind == topopt_core::problem::ConstraintKind::VonMisesStress);
        if needs && spec.stress.is_none() {
            out.push(finding(
                FindingCode::MissingParam,
                "stress".into(),
                "stress formulation without aggregation parameters".into(),
                Some(Correction::FillStressDefaults),
            ));
        }
    }

    if enabled(Check::AspectRatio) {
        let ratio = g.aspect_ratio();
        if !(0.5..=2.0).contains(&ratio) {
            let ny = ((g.height / g.dx()).round() as usize).max(1);
            out.push(finding(
                FindingCode::AspectRatio,
                "geometry.ny".into(),
                format!("element aspect ratio {ratio:.3} outside [0.5, 2]"),
                Some(Correction::SetNy { ny }),
            ));
        }
    }

    if enabled(Check::FilterRadius) && spec.regularization.r_min <= h {
        out.push(finding(
            FindingCode::FilterVsMesh,
            "regularization.r_min".into(),
            format!("filter radius {:.4} does not exceed the element size {h:.4}", spec.regularization.r_min),
            Some(Correction::SetRMin { r_min: R_MIN_FACTOR * h }),
        ));
    }

    if enabled(Check::PointLoad) {
        for (i, load) in spec.loads.iter().enumerate() {
            if matches!(load.location, LoadLocation::Point { .. }) && load.distribution == LoadDistribution::Nodal {
                out.push(finding(
                    FindingCode::PointLoadSingularity,
                    format!("loads[{i}].distribution"),
                    "single-node point load".into(),
                    Some(Correction::DistributeLoad { index: i, n: DISTRIBUTED_NODES }),
                ));
            }
        }
    }

    if enabled(Check::LoadInVoid) {
        for (i, load) in spec.loads.iter().enumerate() {
            let at = load.location.anchor();
            if g.in_void(at) {
                out.push(finding(
                    FindingCode::LoadInVoid,
                    format!("loads[{i}].location"),
                    format!("load at {} lies inside a void region", fmt_point(at)),
                    None,
                ));
            }
        }
    }
    out
}

fn load_mut(s: &mut ProblemSpec, index: usize) -> Result<&mut LoadRegion, SpecError> {
    let n = s.loads.len();
    s.loads.get_mut(index).ok_or_else(|| SpecError::InvalidValue {
        path: format!("loads[{index}]"),
        message: format!("only {n} loads"),
    })
}

pub fn apply_correction(spec: &ProblemSpec, correction: &Correction) -> Result<ProblemSpec, SpecError> {
    let mut s = spec.clone();
    match *correction {
        Correction::SetObjective { objective } => set_objective(&mut s, objective),
        Correction::MoveLoad { index, x, y } => load_mut(&mut s, index)?.location = LoadLocation::Point { x, y },
        Correction::FillStressDefaults => {
            s.stress.get_or_insert_with(StressParams::default);
            sync_stress_and_method(&mut s);
        }
        Correction::SetNy { ny } => s.geometry.ny = ny,
        Correction::SetRMin { r_min } => s.regularization.r_min = r_min,
        Correction::DistributeLoad { index, n } => {
            load_mut(&mut s, index)?.distribution = LoadDistribution::DistributedOverNNodes { n }
        }
    }
    s.provenance = Provenance::ValidatorCorrected;
    s.validate()?;
    Ok(s)
}

fn spec_slots(spec: &ProblemSpec, query: &str) -> BTreeMap<String, String> {
    BTreeMap::from([("user_query".to_string(), query.to_string()), ("spec".to_string(), spec.to_json())])
}

/// Checks `spec`. Deterministic personas run [`run_checks`]; LLM personas
/// return a finding list that must be well formed.
pub fn validator_check(
    spec: &ProblemSpec,
    query: &str,
    intent: Option<&QueryIntent>,
    disabled: &[Check],
    persona: &mut PersonaHandle,
) -> Result<ValidationReport, GatewayError> {
    if persona.is_deterministic() {
        return Ok(ValidationReport { findings: run_checks(spec, intent, disabled), call: None });
    }
    let check = |list: &FindingList| match list.findings.iter().position(|f| !f.is_well_formed()) {
        Some(i) => Err(SchemaError::new(
            Some(format!("findings[{i}].correction")),
            "auto_correctable findings must carry a correction",
        )),
        None => Ok(()),
    };
    let (list, call) =
        persona.ask_checked::<FindingList>(&spec_slots(spec, query), Schema::FindingList, &[], check)?;
    Ok(ValidationReport { findings: list.findings, call: Some(call) })
}
