//! Markdown report for an accepted session: formulation, then solver
//! configuration, then critique.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use topopt_agents::gateway::{CallRecord, GatewayError, PersonaHandle, Schema, SchemaError};
use topopt_agents::memory::{Criterion, SessionMemory, Verdict};
use topopt_core::fem::LinearSolverSettings;
use topopt_core::plan::RunPlan;
use topopt_core::problem::{ConstraintKind, GeometryKind, LoadLocation, ObjectiveKind, ProblemSpec};

pub const DEFAULT_LANGUAGE: &str = "en";

pub const SECTION_TITLES: [&str; 3] = ["Problem formulation", "Solver configuration", "Critique"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub language: String,
    pub formulation: String,
    pub configuration: String,
    pub critique: String,
    pub narrative: String,
    /// Workspace file names of the final density and convergence plots.
    pub images: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report needs an accepted session")]
    NotAccepted,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportText {
    language: String,
    narrative: String,
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" { "0".into() } else { s.to_string() }
}

fn point(x: f64, y: f64) -> String {
    format!("({}, {})", num(x), num(y))
}

fn objective_block(spec: &ProblemSpec) -> String {
    let objective = match spec.objective.kind {
        ObjectiveKind::Compliance => {
            r"\min_{\boldsymbol{\rho}} \quad & c(\bar{\boldsymbol{\rho}}) = \mathbf{F}^{\top}\mathbf{U}(\bar{\boldsymbol{\rho}})".to_string()
        }
        ObjectiveKind::PnormStress => {
            let (p, q) = spec.stress.map_or((8.0, 0.5), |s| (s.pnorm_exponent, s.relaxation_exponent));
            format!(
                r"\min_{{\boldsymbol{{\rho}}}} \quad & \sigma_{{PN}} = \Big(\sum_e \big(\bar\rho_e^{{{}}}\,\sigma^{{vm}}_e\big)^{{{}}}\Big)^{{1/{}}}",
                num(q),
                num(p),
                num(p)
            )
        }
    };
    let mut lines = vec![objective, r"\text{s.t.} \quad & \mathbf{K}(\bar{\boldsymbol{\rho}})\,\mathbf{U} = \mathbf{F}".to_string()];
    for c in &spec.constraints {
        lines.push(match c.kind {
            ConstraintKind::VolumeFraction => {
                format!(r"& \frac{{1}}{{|\Omega|}}\sum_e \bar\rho_e\, v_e \le {}", num(c.bound))
            }
            ConstraintKind::VonMisesStress => format!(r"& \max_e \sigma^{{vm}}_e \le {}", num(c.bound)),
        });
    }
    lines.push(r"& 0 \le \rho_e \le 1".to_string());
    format!("$$\n\\begin{{aligned}}\n{}\n\\end{{aligned}}\n$$\n", lines.join(" \\\\\n"))
}

fn formulation(spec: &ProblemSpec) -> String {
    let g = &spec.geometry;
    let mut s = objective_block(spec);
    s.push('\n');
    let shape = match g.kind {
        GeometryKind::Rectangle => "rectangle",
        GeometryKind::LBracket => "L-shaped domain",
    };
    let _ = writeln!(s, "- Domain: {shape} {} × {} on a {} × {} element grid", num(g.width), num(g.height), g.nx, g.ny);
    for v in &g.void_regions {
        let _ = writeln!(s, "- Void: {} to {}", point(v.x0, v.y0), point(v.x1, v.y1));
    }
    for sup in &spec.supports {
        let _ = writeln!(
            s,
            "- Support: {} to {}, fixed {:?}",
            point(sup.start.x, sup.start.y),
            point(sup.end.x, sup.end.y),
            sup.fixed
        );
    }
    for l in &spec.loads {
        let at = match l.location {
            LoadLocation::Point { x, y } => format!("at {}", point(x, y)),
            LoadLocation::Segment { start, end } => {
                format!("along {} to {}", point(start.x, start.y), point(end.x, end.y))
            }
        };
        let _ = writeln!(s, "- Load {at}: force {}", point(l.force.x, l.force.y));
    }
    let simp = &spec.simp;
    let _ = writeln!(
        s,
        "- Material: modified SIMP, p = {}, E0 = {}, Emin = {:e}, ν = {}",
        num(simp.penal),
        simp.e0,
        simp.emin,
        num(simp.nu)
    );
    let r = &spec.regularization;
    let _ = writeln!(s, "- Density filter radius r_min = {}, projection threshold η = {}", num(r.r_min), num(r.eta));
    s
}

fn configuration(plan: &RunPlan) -> String {
    let spec = &plan.spec;
    let o = &spec.optimizer;
    let solver = match plan.solver.linear_solver {
        LinearSolverSettings::Direct => "direct (sparse Cholesky)".to_string(),
        LinearSolverSettings::Iterative { max_iterations } => format!("iterative CG, at most {max_iterations} iterations"),
    };
    let schedule: Vec<String> =
        spec.regularization.beta_schedule.iter().map(|b| format!("{}@{}", num(b.beta), b.iteration)).collect();
    let tasks: Vec<&str> = plan.tasks.iter().map(|t| t.name.as_str()).collect();
    let rows = [
        ("Optimizer", format!("{:?}", o.method).to_uppercase()),
        ("Move limit", num(o.move_limit)),
        ("Maximum iterations", o.max_iterations.to_string()),
        ("Change tolerance", num(o.change_tolerance)),
        ("Objective window", o.objective_window.to_string()),
        ("β schedule (β@iteration)", schedule.join(", ")),
        ("Filter radius", num(spec.regularization.r_min)),
        ("Linear solver", solver),
        ("Volume tolerance", format!("{:e}", plan.solver.volume_tolerance)),
        ("Seed", plan.seed.to_string()),
        ("Workflow", tasks.join(" → ")),
    ];
    let mut s = String::from("| Parameter | Value |\n|---|---|\n");
    for (k, v) in rows {
        let _ = writeln!(s, "| {k} | {v} |");
    }
    s
}

fn criterion_name(c: Criterion) -> &'static str {
    match c {
        Criterion::OutputValidity => "Output validity",
        Criterion::FormulationConsistency => "Formulation consistency",
        Criterion::Convergence => "Convergence",
        Criterion::DesignQuality => "Design quality",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), num)
}

fn critique(verdict: &Verdict, images: &[String]) -> String {
    let mut s = String::new();
    for r in &verdict.criteria {
        let mark = if r.passed { "pass" } else { "fail" };
        let _ = writeln!(s, "- **{}**: {mark}. {}", criterion_name(r.criterion), r.detail);
    }
    let m = &verdict.metrics;
    let _ = write!(
        s,
        "\n| Metric | Value |\n|---|---|\n| Iterations | {} |\n| Termination | {} |\n| Objective (first → last) | {} → {} |\n\
         | Volume fraction | {} |\n| Non-discreteness M_nd | {} |\n| Checkerboard score | {} |\n| Connected | {} |\n",
        m.iterations,
        m.termination.map_or("n/a".into(), |t| format!("{t:?}")),
        opt(m.objective_first),
        opt(m.objective_last),
        opt(m.volume),
        opt(m.discreteness),
        opt(m.checkerboard),
        m.connected.map_or("n/a", |c| if c { "yes" } else { "no" }),
    );
    let captions = ["Final design", "Convergence history"];
    s.push('\n');
    for (caption, img) in captions.iter().zip(images) {
        let _ = writeln!(s, "![{caption}]({img})");
    }
    s
}

fn default_narrative(memory: &SessionMemory, spec: &ProblemSpec, verdict: &Verdict) -> String {
    let objective = match spec.objective.kind {
        ObjectiveKind::Compliance => "compliance",
        ObjectiveKind::PnormStress => "p-norm von Mises stress",
    };
    let c = memory.counters;
    format!(
        "The design minimizes {objective} and was accepted after {} kernel runs, {} system refinements, \
         {} reviewer retries and {} feedback cycles. The final run took {} iterations and reached an \
         objective of {} at volume fraction {}.",
        memory.artifacts.len(),
        c.system_refinements,
        c.reviewer_retries,
        c.user_cycles,
        verdict.metrics.iterations,
        opt(verdict.metrics.objective_last),
        opt(verdict.metrics.volume),
    )
}

/// Builds the report of the accepted design in `memory`. A model-backed
/// `writer` produces the narrative in `language`; a deterministic one uses
/// a fixed English summary under the requested tag.
pub fn generate_report(
    memory: &SessionMemory,
    language: &str,
    writer: &mut PersonaHandle,
) -> Result<(Report, Option<CallRecord>), ReportError> {
    if !memory.is_accepted() {
        return Err(ReportError::NotAccepted);
    }
    let artifacts = memory.artifacts.last().ok_or(ReportError::NotAccepted)?;
    let verdict = memory.last_verdict().ok_or(ReportError::NotAccepted)?;
    let plan = &memory.plans[artifacts.plan];
    let spec = memory.current_spec().unwrap_or(&plan.spec);
    let images = vec![artifacts.density_image.clone(), artifacts.convergence_plot.clone()];
    let mut report = Report {
        language: language.to_string(),
        formulation: formulation(spec),
        configuration: configuration(plan),
        critique: critique(verdict, &images),
        narrative: default_narrative(memory, spec, verdict),
        images,
    };
    if writer.is_deterministic() {
        return Ok((report, None));
    }
    let inputs = BTreeMap::from([
        ("user_query".to_string(), memory.user_query.clone()),
        ("formulation".to_string(), report.formulation.clone()),
        ("configuration".to_string(), report.configuration.clone()),
        ("critique".to_string(), report.critique.clone()),
        ("language".to_string(), language.to_string()),
    ]);
    let check = |t: &ReportText| {
        if t.narrative.trim().is_empty() {
            Err(SchemaError::new(Some("narrative".into()), "narrative is empty"))
        } else {
            Ok(())
        }
    };
    let (text, call) = writer.ask_checked::<ReportText>(&inputs, Schema::ReportText, &[], check)?;
    report.language = text.language;
    report.narrative = text.narrative;
    Ok((report, Some(call)))
}

impl Report {
    pub fn to_markdown(&self) -> String {
        format!(
            "---\nlanguage: {}\n---\n\n# Topology optimization report\n\n{}\n\n## 1. {}\n\n{}\n## 2. {}\n\n{}\n## 3. {}\n\n{}",
            self.language,
            self.narrative,
            SECTION_TITLES[0],
            self.formulation,
            SECTION_TITLES[1],
            self.configuration,
            SECTION_TITLES[2],
            self.critique,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use topopt_core::problem::{builtin_benchmark, Benchmark};

    #[test]
    fn numbers_are_trimmed() {
        assert_eq!(num(0.4), "0.4");
        assert_eq!(num(3.0), "3");
        assert_eq!(num(0.00001), "0");
        assert_eq!(num(-2.5), "-2.5");
    }

    #[test]
    fn compliance_formulation_has_volume_bound() {
        let f = formulation(&builtin_benchmark(Benchmark::Cantilever));
        assert!(f.contains(r"\mathbf{F}^{\top}\mathbf{U}"));
        assert!(f.contains(r"\le 0.4"));
        assert!(f.contains("120 × 40"));
    }

    #[test]
    fn stress_formulation_shows_exponents_and_void() {
        let f = formulation(&builtin_benchmark(Benchmark::LBracketStress));
        assert!(f.contains(r"\sigma_{PN}"));
        assert!(f.contains("^{8}"));
        assert!(f.contains("Void: (0.4, 0.4) to (1, 1)"));
    }

    #[test]
    fn empty_memory_is_wrong_state() {
        let mut w = PersonaHandle::deterministic(topopt_agents::events::Agent::Orchestrator, topopt_agents::prompts::reporter());
        assert!(matches!(generate_report(&SessionMemory::default(), "en", &mut w), Err(ReportError::NotAccepted)));
    }
}
