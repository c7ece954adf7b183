//! Critic: the ordered four-criterion rubric.

use std::collections::BTreeMap;

use serde::Deserialize;
use topopt_core::fem::{build_mesh, resolve_boundary};
use topopt_core::optimizer::OptimizationResult;
use topopt_core::problem::{Point, ProblemSpec, SupportRegion};

use crate::gateway::{CallRecord, GatewayError, PersonaHandle, Schema, SchemaError};
use crate::intent::QueryIntent;
use crate::memory::{Criterion, CriterionResult, CriticThresholds, RunArtifacts, Verdict, VerdictMetrics};
use crate::metrics::{checkerboard_score, connectivity_check, discreteness_measure};
use crate::workspace::Workspace;

pub fn compute_metrics(result: &OptimizationResult, spec: &ProblemSpec, thresholds: &CriticThresholds) -> VerdictMetrics {
    let records = &result.history.records;
    let mut m = VerdictMetrics {
        termination: Some(result.history.termination),
        iterations: records.len(),
        objective_first: records.first().map(|r| r.objective),
        objective_last: records.last().map(|r| r.objective),
        final_change: records.last().map(|r| r.change),
        volume: Some(result.final_volume()),
        ..Default::default()
    };
    if records.is_empty() || result.rho_bar.len() != result.active.len() {
        return m;
    }
    m.discreteness = Some(discreteness_measure(&result.rho_bar, &result.active));
    if let Ok(mesh) = build_mesh(&spec.geometry) {
        m.checkerboard = Some(checkerboard_score(&result.rho_bar, &mesh));
        m.connected = resolve_boundary(&mesh, &spec.supports, &spec.loads)
            .ok()
            .map(|bc| connectivity_check(&result.rho_bar, &mesh, &bc, thresholds.connectivity_threshold));
    }
    m
}

fn result(criterion: Criterion, passed: bool, detail: impl Into<String>) -> CriterionResult {
    CriterionResult { criterion, passed, detail: detail.into() }
}

fn output_validity(artifacts: &RunArtifacts, result: &OptimizationResult, ws: &Workspace) -> CriterionResult {
    let c = Criterion::OutputValidity;
    if let Some(e) = &artifacts.error {
        return self::result(c, false, format!("run failed: {e}"));
    }
    let missing: Vec<&str> = [&artifacts.density_image, &artifacts.convergence_plot, &artifacts.history]
        .into_iter()
        .filter(|n| !ws.has_content(n))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return self::result(c, false, format!("missing or empty: {}", missing.join(", ")));
    }
    if artifacts.iterations == 0 {
        return self::result(c, false, "empty iteration history");
    }
    let active = || result.rho_bar.iter().zip(&result.active).filter(|(_, &a)| a).map(|(&v, _)| v);
    let solid = active().any(|v| v > 0.5);
    let void = active().any(|v| v < 0.5);
    if !(solid && void) {
        return self::result(c, false, "density field is trivial (no solid/void split at 0.5)");
    }
    self::result(c, true, "artifacts present, design non-trivial")
}

fn support_matches(a: &SupportRegion, b: &SupportRegion, tol: f64) -> bool {
    let same = |p: Point, q: Point| p.distance(q) <= tol;
    a.fixed == b.fixed && (same(a.start, b.start) && same(a.end, b.end) || same(a.start, b.end) && same(a.end, b.start))
}

/// Mismatches between `spec` and the query intent, as human-readable lines.
pub fn formulation_mismatches(spec: &ProblemSpec, intent: &QueryIntent) -> Vec<String> {
    let tol = spec.geometry.element_size() * (1.0 + 1e-9);
    let mut out = Vec::new();
    if spec.objective.kind != intent.objective {
        out.push(format!("objective {:?}, query asks {:?}", spec.objective.kind, intent.objective));
    }
    let kinds: Vec<_> = spec.constraints.iter().map(|c| c.kind).collect();
    if kinds != [intent.constraint] {
        out.push(format!("constraints {kinds:?}, query asks [{:?}]", intent.constraint));
    } else if let (Some(want), Some(have)) = (intent.volume_fraction, spec.volume_bound()) {
        if (want - have).abs() > 1e-9 {
            out.push(format!("volume bound {have}, query asks {want}"));
        }
    }
    let anchors: Vec<Point> = spec.loads.iter().map(|l| l.location.anchor()).collect();
    let loads_ok = anchors.len() == intent.load_points.len()
        && intent.load_points.iter().all(|p| anchors.iter().any(|a| a.distance(*p) <= tol));
    if !loads_ok {
        out.push("loads differ from the query".into());
    }
    let supports_ok = spec.supports.len() == intent.supports.len()
        && intent.supports.iter().all(|s| spec.supports.iter().any(|t| support_matches(s, t, tol)));
    if !supports_ok {
        out.push("supports differ from the query".into());
    }
    out
}

fn formulation_consistency(spec: &ProblemSpec, intent: Option<&QueryIntent>) -> CriterionResult {
    let c = Criterion::FormulationConsistency;
    let Some(intent) = intent else {
        return result(c, true, "no keyword intent to compare against");
    };
    let mismatches = formulation_mismatches(spec, intent);
    if mismatches.is_empty() {
        result(c, true, "formulation matches the query")
    } else {
        result(c, false, mismatches.join("; "))
    }
}

fn convergence(m: &VerdictMetrics, thresholds: &CriticThresholds) -> CriterionResult {
    let c = Criterion::Convergence;
    let term = m.termination.map_or("none".to_string(), |t| t.to_string());
    if !m.termination.is_some_and(|t| t.is_converged()) {
        return result(c, false, format!("terminated with {term}"));
    }
    if m.iterations < thresholds.min_iterations {
        return result(c, false, format!("only {} iterations", m.iterations));
    }
    match (m.objective_first, m.objective_last) {
        (Some(a), Some(b)) if b < a => result(c, true, format!("{term} after {} iterations", m.iterations)),
        (a, b) => result(c, false, format!("objective did not decrease ({a:?} to {b:?})")),
    }
}

/// Design-quality failure in tie-break order: checkerboard, then gray, then
/// connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityIssue {
    Checkerboard,
    Gray,
    Disconnected,
}

pub fn quality_issue(m: &VerdictMetrics, t: &CriticThresholds) -> Option<QualityIssue> {
    if m.checkerboard.is_none_or(|s| s > t.max_checkerboard) {
        Some(QualityIssue::Checkerboard)
    } else if m.discreteness.is_none_or(|d| d > t.max_discreteness) {
        Some(QualityIssue::Gray)
    } else if m.connected != Some(true) {
        Some(QualityIssue::Disconnected)
    } else {
        None
    }
}

fn design_quality(m: &VerdictMetrics, t: &CriticThresholds) -> CriterionResult {
    let c = Criterion::DesignQuality;
    let summary = format!(
        "M_nd {}, checkerboard {}, connected {}",
        m.discreteness.map_or("n/a".into(), |v| format!("{v:.4}")),
        m.checkerboard.map_or("n/a".into(), |v| format!("{v:.4}")),
        m.connected.map_or("n/a".into(), |v| v.to_string()),
    );
    match quality_issue(m, t) {
        None => result(c, true, summary),
        Some(QualityIssue::Checkerboard) => result(c, false, format!("checkerboard pattern: {summary}")),
        Some(QualityIssue::Gray) => result(c, false, format!("gray regions: {summary}")),
        Some(QualityIssue::Disconnected) => result(c, false, format!("load path disconnected: {summary}")),
    }
}

/// Deterministic rubric evaluation.
pub fn evaluate_rubric(
    artifacts: &RunArtifacts,
    result: &OptimizationResult,
    spec: &ProblemSpec,
    intent: Option<&QueryIntent>,
    ws: &Workspace,
    thresholds: &CriticThresholds,
) -> Verdict {
    let metrics = compute_metrics(result, spec, thresholds);
    let criteria = vec![
        output_validity(artifacts, result, ws),
        formulation_consistency(spec, intent),
        convergence(&metrics, thresholds),
        design_quality(&metrics, thresholds),
    ];
    Verdict::from_results(criteria, metrics)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticReply {
    pub criteria: Vec<CriterionResult>,
}

fn check_reply(r: &CriticReply) -> Result<(), SchemaError> {
    for c in Criterion::ORDER {
        if r.criteria.iter().filter(|x| x.criterion == c).count() != 1 {
            return Err(SchemaError::new(Some("criteria".into()), format!("expected exactly one {c:?} entry")));
        }
    }
    Ok(())
}

/// Verdict for a finished run. Metrics are always computed numerically; an
/// LLM persona judges the criteria from them and the rendered images.
#[allow(clippy::too_many_arguments)]
pub fn critic_evaluate(
    artifacts: &RunArtifacts,
    result: &OptimizationResult,
    spec: &ProblemSpec,
    query: &str,
    intent: Option<&QueryIntent>,
    ws: &Workspace,
    thresholds: &CriticThresholds,
    persona: &mut PersonaHandle,
) -> Result<(Verdict, Option<CallRecord>), GatewayError> {
    if persona.is_deterministic() {
        return Ok((evaluate_rubric(artifacts, result, spec, intent, ws, thresholds), None));
    }
    let metrics = compute_metrics(result, spec, thresholds);
    let inputs = BTreeMap::from([
        ("user_query".to_string(), query.to_string()),
        ("spec".to_string(), spec.to_json()),
        ("metrics".to_string(), serde_json::to_string_pretty(&metrics).expect("metrics serialize")),
        ("run".to_string(), serde_json::to_string_pretty(artifacts).expect("artifacts serialize")),
    ]);
    let images: Vec<Vec<u8>> = [&artifacts.density_image, &artifacts.convergence_plot]
        .into_iter()
        .filter_map(|n| std::fs::read(ws.path(n)).ok())
        .collect();
    let (reply, call) = persona.ask_checked::<CriticReply>(&inputs, Schema::Verdict, &images, check_reply)?;
    Ok((Verdict::from_results(reply.criteria, metrics), Some(call)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{benchmark_query, extract_intent};
    use topopt_core::optimizer::{IterationRecord, OptimizationHistory, Termination};
    use topopt_core::problem::{builtin_benchmark, Benchmark, ConstraintKind, ConstraintSpec, StressParams};

    fn thresholds() -> CriticThresholds {
        CriticThresholds::default()
    }

    fn metrics(cb: f64, mnd: f64, connected: bool) -> VerdictMetrics {
        VerdictMetrics {
            discreteness: Some(mnd),
            checkerboard: Some(cb),
            connected: Some(connected),
            termination: Some(Termination::ConvergedChangeTol),
            iterations: 50,
            objective_first: Some(2.0),
            objective_last: Some(1.0),
            final_change: Some(0.005),
            volume: Some(0.4),
        }
    }

    #[test]
    fn quality_tie_break_order() {
        let t = thresholds();
        assert_eq!(quality_issue(&metrics(0.3, 0.5, false), &t), Some(QualityIssue::Checkerboard));
        assert_eq!(quality_issue(&metrics(0.0, 0.5, false), &t), Some(QualityIssue::Gray));
        assert_eq!(quality_issue(&metrics(0.0, 0.1, false), &t), Some(QualityIssue::Disconnected));
        assert_eq!(quality_issue(&metrics(0.0, 0.1, true), &t), None);
    }

    #[test]
    fn checkerboard_failure_carries_metric() {
        let r = design_quality(&metrics(0.3, 0.05, true), &thresholds());
        assert!(!r.passed);
        assert!(r.detail.contains("0.3000"), "{}", r.detail);
    }

    #[test]
    fn convergence_needs_decrease_and_iterations() {
        let t = thresholds();
        assert!(convergence(&metrics(0.0, 0.0, true), &t).passed);
        let mut m = metrics(0.0, 0.0, true);
        m.iterations = 3;
        assert!(!convergence(&m, &t).passed);
        let mut m = metrics(0.0, 0.0, true);
        m.objective_last = Some(3.0);
        assert!(!convergence(&m, &t).passed);
        let mut m = metrics(0.0, 0.0, true);
        m.termination = Some(Termination::MaxIterations);
        assert!(!convergence(&m, &t).passed);
    }

    #[test]
    fn stress_constraint_for_volume_query_is_inconsistent() {
        let b = Benchmark::LBracketStress;
        let intent = extract_intent(benchmark_query(b)).unwrap();
        let mut spec = builtin_benchmark(b);
        assert!(formulation_mismatches(&spec, &intent).is_empty());
        spec.constraints = vec![ConstraintSpec { kind: ConstraintKind::VonMisesStress, bound: 500.0 }];
        spec.stress = Some(StressParams::default());
        let r = formulation_consistency(&spec, Some(&intent));
        assert!(!r.passed);
        assert!(r.detail.contains("VonMisesStress"));
    }

    #[test]
    fn load_within_one_element_is_consistent() {
        let b = Benchmark::Cantilever;
        let intent = extract_intent(benchmark_query(b)).unwrap();
        let mut spec = builtin_benchmark(b);
        let h = spec.geometry.element_size();
        spec.loads[0].location = topopt_core::problem::LoadLocation::Point { x: 2.0, y: 0.5 - 0.9 * h };
        assert!(formulation_mismatches(&spec, &intent).is_empty());
        spec.loads[0].location = topopt_core::problem::LoadLocation::Point { x: 2.0, y: 0.5 - 2.0 * h };
        assert_eq!(formulation_mismatches(&spec, &intent).len(), 1);
    }

    fn fake_result(spec: &ProblemSpec, rho: Vec<f64>) -> OptimizationResult {
        let n = rho.len();
        OptimizationResult {
            rho: rho.clone(),
            rho_tilde: rho.clone(),
            rho_bar: rho,
            active: vec![true; n],
            nx: spec.geometry.nx,
            ny: spec.geometry.ny,
            history: OptimizationHistory {
                records: vec![IterationRecord {
                    iteration: 1,
                    objective: 1.0,
                    constraints: vec![0.0],
                    change: 0.1,
                    beta: 1.0,
                    ms: 0,
                }],
                termination: Termination::MaxIterations,
            },
            solution: None,
            spec: spec.clone(),
            error: None,
            objective_scale: 1.0,
            effective_schedule: vec![],
            log: vec![],
        }
    }

    #[test]
    fn uniform_design_is_trivial_output() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::create(dir.path()).unwrap();
        for n in ["d.png", "c.png", "h.csv"] {
            ws.write(n, "x").unwrap();
        }
        let mut spec = builtin_benchmark(Benchmark::Cantilever);
        spec.geometry.nx = 4;
        spec.geometry.ny = 2;
        let artifacts = RunArtifacts {
            run: 1,
            plan: 0,
            termination: Termination::MaxIterations,
            iterations: 1,
            final_objective: Some(1.0),
            final_volume: 1.0,
            error: None,
            density_image: "d.png".into(),
            convergence_plot: "c.png".into(),
            history: "h.csv".into(),
            log: "l.log".into(),
        };
        let r = output_validity(&artifacts, &fake_result(&spec, vec![1.0; 8]), &ws);
        assert!(!r.passed);
        let r = output_validity(&artifacts, &fake_result(&spec, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]), &ws);
        assert!(r.passed, "{}", r.detail);
        let mut missing = artifacts.clone();
        missing.history = "nope.csv".into();
        assert!(!output_validity(&missing, &fake_result(&spec, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]), &ws).passed);
    }

    #[test]
    fn llm_reply_needs_all_criteria() {
        let partial = r#"{"criteria":[{"criterion":"output_validity","passed":true,"detail":""}]}"#;
        let reply: CriticReply = serde_json::from_str(partial).unwrap();
        assert!(check_reply(&reply).is_err());
    }
}
