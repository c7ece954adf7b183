//! Keyword-level extraction of what a query asks for. Deterministic personas
//! rely on this alone; free-form language needs an LLM persona.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use topopt_core::problem::{
    builtin_benchmark, parse_problem_file, Benchmark, ConstraintKind, ObjectiveKind, Point, ProblemSpec, SpecError,
    SupportRegion,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIntent {
    pub benchmark: Option<Benchmark>,
    pub objective: ObjectiveKind,
    pub constraint: ConstraintKind,
    pub volume_fraction: Option<f64>,
    pub load_points: Vec<Point>,
    pub supports: Vec<SupportRegion>,
    /// The problem embedded in the query, when it carried one.
    #[serde(skip)]
    pub embedded: Option<ProblemSpec>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentError {
    #[error("query names no built-in benchmark and embeds no problem document")]
    Unrecognised,
    #[error("embedded problem document is invalid: {0}")]
    Embedded(#[from] SpecError),
}

static VOLUME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)volume(?:\s+fraction)?(?:\s+(?:of|=|is|at most|below))?\s*:?\s*(\d*\.\d+|\d+(?:\.\d+)?\s*%)")
        .expect("valid regex")
});

const STRESS_WORDS: [&str; 3] = ["stress", "von mises", "von-mises"];
const COMPLIANCE_WORDS: [&str; 3] = ["stiff", "compliance", "rigid"];

/// Builtin benchmark named by `query`, by keyword.
pub fn benchmark_keyword(query: &str) -> Option<Benchmark> {
    let q = query.to_lowercase();
    if q.contains("l_bracket") || q.contains("l-bracket") || q.contains("l-shaped") || q.contains("l bracket") {
        Some(Benchmark::LBracketStress)
    } else if q.contains("mbb") || q.contains("messerschmitt") {
        Some(Benchmark::MbbMidRight)
    } else if q.contains("cantilever") {
        Some(Benchmark::Cantilever)
    } else {
        None
    }
}

/// JSON problem document embedded in `query`: from the first `{` to the last `}`.
pub fn embedded_document(query: &str) -> Option<&str> {
    let start = query.find('{')?;
    let end = query.rfind('}')?;
    (end > start).then(|| &query[start..=end])
}

fn volume_fraction(query: &str) -> Option<f64> {
    let caps = VOLUME.captures(query)?;
    let raw = caps.get(1)?.as_str().trim();
    let value = match raw.strip_suffix('%') {
        Some(p) => p.trim().parse::<f64>().ok()? / 100.0,
        None => raw.parse::<f64>().ok()?,
    };
    (value > 0.0 && value < 1.0).then_some(value)
}

fn objective_keyword(query: &str) -> Option<ObjectiveKind> {
    let q = query.to_lowercase();
    if STRESS_WORDS.iter().any(|w| q.contains(w)) {
        Some(ObjectiveKind::PnormStress)
    } else if COMPLIANCE_WORDS.iter().any(|w| q.contains(w)) {
        Some(ObjectiveKind::Compliance)
    } else {
        None
    }
}

fn from_spec(spec: &ProblemSpec) -> QueryIntent {
    QueryIntent {
        benchmark: None,
        objective: spec.objective.kind,
        constraint: spec.constraints.first().map_or(ConstraintKind::VolumeFraction, |c| c.kind),
        volume_fraction: spec.volume_bound(),
        load_points: spec.loads.iter().map(|l| l.location.anchor()).collect(),
        supports: spec.supports.clone(),
        embedded: None,
    }
}

/// Extracts the intent of `query`. An embedded problem document takes
/// precedence over benchmark keywords.
pub fn extract_intent(query: &str) -> Result<QueryIntent, IntentError> {
    if let Some(doc) = embedded_document(query) {
        let spec = parse_problem_file(doc)?;
        let mut intent = from_spec(&spec);
        intent.embedded = Some(spec);
        return Ok(intent);
    }
    let benchmark = benchmark_keyword(query).ok_or(IntentError::Unrecognised)?;
    let mut intent = from_spec(&builtin_benchmark(benchmark));
    intent.benchmark = Some(benchmark);
    if let Some(objective) = objective_keyword(query) {
        intent.objective = objective;
    }
    if let Some(v) = volume_fraction(query) {
        intent.volume_fraction = Some(v);
    }
    Ok(intent)
}

/// Canonical query text for a builtin benchmark.
pub fn benchmark_query(b: Benchmark) -> &'static str {
    match b {
        Benchmark::Cantilever => {
            "Find the stiffest cantilever beam clamped along its left edge and loaded downward at the middle of its \
             free end, using volume fraction 0.4."
        }
        Benchmark::MbbMidRight => {
            "Find the stiffest MBB beam, modelled as a symmetric half with a downward load at mid-span, using volume \
             fraction 0.5."
        }
        Benchmark::LBracketStress => {
            "Minimize the peak von Mises stress of an L-shaped bracket fixed along the top of its vertical arm and \
             loaded downward at the upper-right end of its horizontal arm, using volume fraction 0.4."
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_queries_round_trip() {
        for b in Benchmark::ALL {
            let intent = extract_intent(benchmark_query(b)).unwrap();
            let spec = builtin_benchmark(b);
            assert_eq!(intent.benchmark, Some(b));
            assert_eq!(intent.objective, spec.objective.kind);
            assert_eq!(intent.volume_fraction, spec.volume_bound());
            assert_eq!(intent.load_points, vec![spec.loads[0].location.anchor()]);
        }
    }

    #[test]
    fn stress_words_pick_stress_objective() {
        let i = extract_intent("cantilever with lowest von Mises stress").unwrap();
        assert_eq!(i.objective, ObjectiveKind::PnormStress);
        let i = extract_intent("the stiffest cantilever").unwrap();
        assert_eq!(i.objective, ObjectiveKind::Compliance);
    }

    #[test]
    fn volume_fraction_forms() {
        assert_eq!(volume_fraction("volume fraction 0.3"), Some(0.3));
        assert_eq!(volume_fraction("Volume fraction of .25 please"), Some(0.25));
        assert_eq!(volume_fraction("volume 35 %"), Some(0.35));
        assert_eq!(volume_fraction("volume fraction: 0.45"), Some(0.45));
        assert_eq!(volume_fraction("no numbers"), None);
    }

    #[test]
    fn embedded_document_wins() {
        let mut spec = builtin_benchmark(Benchmark::MbbMidRight);
        spec.constraints[0].bound = 0.3;
        let query = format!("Solve this cantilever variant: {}", spec.to_json());
        let i = extract_intent(&query).unwrap();
        assert_eq!(i.benchmark, None);
        assert_eq!(i.volume_fraction, Some(0.3));
        assert_eq!(i.embedded, Some(spec));
    }

    #[test]
    fn unknown_query_is_rejected() {
        assert_eq!(extract_intent("design a bridge"), Err(IntentError::Unrecognised));
    }
}
