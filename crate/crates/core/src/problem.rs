//! Canonical, serializable statement of a topology optimization problem.
//!
//! A [`ProblemSpec`] bundles the geometry, boundary conditions, objective and
//! constraints together with every numerical parameter the kernel needs. It is
//! exchanged as a JSON document (see [`parse_problem_file`] and
//! [`ProblemSpec::to_json`]), produced by the formulation agents and mutated
//! only through recorded [`FieldChange`]s.

mod benchmarks;
mod diff;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use benchmarks::{builtin_benchmark, default_beta_schedule, default_r_min, Benchmark};
pub use diff::{apply_changes, spec_diff, FieldChange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub geometry: DomainGeometry,
    pub supports: Vec<SupportRegion>,
    pub loads: Vec<LoadRegion>,
    pub objective: ObjectiveSpec,
    pub constraints: Vec<ConstraintSpec>,
    pub num_inequality: usize,
    pub num_equality: usize,
    pub simp: SimpParams,
    pub regularization: RegularizationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stress: Option<StressParams>,
    pub optimizer: OptimizerParams,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Rectangle,
    LBracket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainGeometry {
    pub kind: GeometryKind,
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub void_regions: Vec<Rect>,
}

impl DomainGeometry {
    pub fn dx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.height / self.ny as f64
    }

    /// Element aspect ratio `dx / dy`.
    pub fn aspect_ratio(&self) -> f64 {
        self.dx() / self.dy()
    }

    pub fn element_size(&self) -> f64 {
        self.dx().max(self.dy())
    }

    pub fn contains(&self, p: Point) -> bool {
        let tol = 1e-9 * self.width.max(self.height);
        p.x >= -tol && p.x <= self.width + tol && p.y >= -tol && p.y <= self.height + tol
    }

    /// True when `p` lies strictly inside one of the void rectangles.
    pub fn in_void(&self, p: Point) -> bool {
        self.void_regions.iter().any(|r| r.contains_strictly(p))
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn contains_strictly(&self, p: Point) -> bool {
        p.x > self.x0 && p.x < self.x1 && p.y > self.y0 && p.y < self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedComponents {
    X,
    Y,
    Both,
}

impl FixedComponents {
    pub fn fixes_x(self) -> bool {
        matches!(self, Self::X | Self::Both)
    }

    pub fn fixes_y(self) -> bool {
        matches!(self, Self::Y | Self::Both)
    }
}

/// Supported edge segment; every mesh node on the segment is constrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportRegion {
    pub start: Point,
    pub end: Point,
    pub fixed: FixedComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadLocation {
    Point { x: f64, y: f64 },
    Segment { start: Point, end: Point },
}

impl LoadLocation {
    /// Representative point: the point itself, or the segment midpoint.
    pub fn anchor(&self) -> Point {
        match *self {
            LoadLocation::Point { x, y } => Point::new(x, y),
            LoadLocation::Segment { start, end } => {
                Point::new(0.5 * (start.x + end.x), 0.5 * (start.y + end.y))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadDistribution {
    Nodal,
    DistributedOverNNodes { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRegion {
    pub location: LoadLocation,
    pub force: Point,
    pub distribution: LoadDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Compliance,
    PnormStress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
}

/// Inequality constraint kinds. Only `volume_fraction` is offered to users;
/// `von_mises_stress` exists so that a mis-formulated stress constraint can be
/// represented, executed and then caught downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    VolumeFraction,
    VonMisesStress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpParams {
    pub penal: f64,
    pub e0: f64,
    pub emin: f64,
    pub nu: f64,
}

impl Default for SimpParams {
    fn default() -> Self {
        Self { penal: 3.0, e0: 1.0, emin: 1e-9, nu: 0.3 }
    }
}

impl SimpParams {
    /// Modified SIMP modulus `Emin + ρ̄^p (E0 − Emin)`.
    pub fn modulus(&self, rho_bar: f64) -> f64 {
        self.emin + rho_bar.powf(self.penal) * (self.e0 - self.emin)
    }

    pub fn modulus_derivative(&self, rho_bar: f64) -> f64 {
        self.penal * rho_bar.powf(self.penal - 1.0) * (self.e0 - self.emin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaBreakpoint {
    pub iteration: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationParams {
    pub r_min: f64,
    pub eta: f64,
    pub beta_schedule: Vec<BetaBreakpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressParams {
    pub pnorm_exponent: f64,
    pub relaxation_exponent: f64,
}

impl Default for StressParams {
    fn default() -> Self {
        Self { pnorm_exponent: 8.0, relaxation_exponent: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    Oc,
    Mma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerParams {
    pub method: OptimizerMethod,
    pub move_limit: f64,
    pub max_iterations: usize,
    pub change_tolerance: f64,
    pub objective_window: usize,
}

impl OptimizerParams {
    pub fn defaults_for(objective: ObjectiveKind) -> Self {
        let method = match objective {
            ObjectiveKind::Compliance => OptimizerMethod::Oc,
            ObjectiveKind::PnormStress => OptimizerMethod::Mma,
        };
        Self {
            method,
            move_limit: 0.2,
            max_iterations: 300,
            change_tolerance: 0.01,
            objective_window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    User,
    Scientist,
    ValidatorCorrected,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("malformed document at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown field `{path}`")]
    UnknownField { path: String },
    #[error("missing required field `{path}`")]
    MissingField { path: String },
    #[error("invalid value at `{path}`: {message}")]
    InvalidValue { path: String, message: String },
    #[error("invariant violated at `{path}`: {message}")]
    Invariant { path: String, message: String },
}

impl SpecError {
    /// Field path the error refers to, when there is one.
    pub fn path(&self) -> Option<&str> {
        match self {
            SpecError::Syntax { .. } => None,
            SpecError::UnknownField { path }
            | SpecError::MissingField { path }
            | SpecError::InvalidValue { path, .. }
            | SpecError::Invariant { path, .. } => Some(path),
        }
    }

    fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Invariant { path: path.into(), message: message.into() }
    }
}

/// Parses a problem document and checks every type invariant.
///
/// Geometric consistency between loads and void regions is not checked here;
/// that belongs to validation.
pub fn parse_problem_file(text: &str) -> Result<ProblemSpec, SpecError> {
    let spec: ProblemSpec = deserialize_with_path(text)?;
    spec.validate()?;
    Ok(spec)
}

/// Deserializes any JSON document, mapping serde failures onto [`SpecError`]
/// with the offending field path.
pub fn deserialize_with_path<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, SpecError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        classify_serde_error(path, &inner)
    })
}

fn classify_serde_error(path: String, err: &serde_json::Error) -> SpecError {
    use serde_json::error::Category;
    let message = err.to_string();
    let join = |field: &str| {
        if path == "." || path.is_empty() {
            field.to_string()
        } else if path == field || path.ends_with(&format!(".{field}")) {
            path.clone()
        } else {
            format!("{path}.{field}")
        }
    };
    match err.classify() {
        Category::Syntax | Category::Eof | Category::Io => SpecError::Syntax {
            line: err.line(),
            column: err.column(),
            message,
        },
        Category::Data => {
            if let Some(field) = backticked(&message, "unknown field `") {
                SpecError::UnknownField { path: join(field) }
            } else if let Some(field) = backticked(&message, "missing field `") {
                SpecError::MissingField { path: join(field) }
            } else {
                SpecError::InvalidValue { path, message }
            }
        }
    }
}

fn backticked<'a>(message: &'a str, prefix: &str) -> Option<&'a str> {
    let start = message.find(prefix)? + prefix.len();
    let rest = &message[start..];
    rest.find('`').map(|end| &rest[..end])
}

impl ProblemSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem spec serializes")
    }

    pub fn volume_bound(&self) -> Option<f64> {
        self.constraints
            .iter()
            .find(|c| c.kind == ConstraintKind::VolumeFraction)
            .map(|c| c.bound)
    }

    /// Initial uniform design value: the volume bound, or 0.5 without one.
    pub fn initial_density(&self) -> f64 {
        self.volume_bound().unwrap_or(0.5)
    }

    /// Checks every type invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), SpecError> {
        self.validate_geometry()?;
        self.validate_boundary_conditions()?;
        self.validate_formulation()?;
        self.validate_parameters()
    }

    fn validate_geometry(&self) -> Result<(), SpecError> {
        let g = &self.geometry;
        if !(g.width > 0.0 && g.width.is_finite()) {
            return Err(SpecError::invariant("geometry.width", "must be positive"));
        }
        if !(g.height > 0.0 && g.height.is_finite()) {
            return Err(SpecError::invariant("geometry.height", "must be positive"));
        }
        if g.nx == 0 {
            return Err(SpecError::invariant("geometry.nx", "must be at least 1"));
        }
        if g.ny == 0 {
            return Err(SpecError::invariant("geometry.ny", "must be at least 1"));
        }
        for (i, r) in g.void_regions.iter().enumerate() {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return Err(SpecError::invariant(
                    format!("geometry.void_regions[{i}]"),
                    "rectangle must have positive extent",
                ));
            }
        }
        if g.kind == GeometryKind::LBracket {
            let tol = 1e-9 * g.width.max(g.height);
            let corner_cut = g.void_regions.first().is_some_and(|r| {
                (r.x1 - g.width).abs() <= tol && (r.y1 - g.height).abs() <= tol
            });
            if !corner_cut {
                return Err(SpecError::invariant(
                    "geometry.void_regions",
                    "an l_bracket must list its upper-right cut-out first",
                ));
            }
        }
        Ok(())
    }

    fn validate_boundary_conditions(&self) -> Result<(), SpecError> {
        let g = &self.geometry;
        for (i, s) in self.supports.iter().enumerate() {
            if s.start == s.end {
                return Err(SpecError::invariant(
                    format!("supports[{i}]"),
                    "segment endpoints must be distinct",
                ));
            }
            for (name, p) in [("start", s.start), ("end", s.end)] {
                if !g.contains(p) {
                    return Err(SpecError::invariant(
                        format!("supports[{i}].{name}"),
                        "lies outside the domain",
                    ));
                }
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if l.force.x == 0.0 && l.force.y == 0.0 || !l.force.x.is_finite() || !l.force.y.is_finite() {
                return Err(SpecError::invariant(format!("loads[{i}].force"), "force vector must be nonzero"));
            }
            match l.location {
                LoadLocation::Point { x, y } => {
                    if !g.contains(Point::new(x, y)) {
                        return Err(SpecError::invariant(
                            format!("loads[{i}].location"),
                            "lies outside the domain",
                        ));
                    }
                }
                LoadLocation::Segment { start, end } => {
                    if start == end {
                        return Err(SpecError::invariant(
                            format!("loads[{i}].location"),
                            "segment endpoints must be distinct",
                        ));
                    }
                    if !g.contains(start) || !g.contains(end) {
                        return Err(SpecError::invariant(
                            format!("loads[{i}].location"),
                            "lies outside the domain",
                        ));
                    }
                }
            }
            if let LoadDistribution::DistributedOverNNodes { n } = l.distribution {
                if n == 0 {
                    return Err(SpecError::invariant(
                        format!("loads[{i}].distribution.n"),
                        "must be at least 1",
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_formulation(&self) -> Result<(), SpecError> {
        if self.objective.kind == ObjectiveKind::Compliance && self.constraints.is_empty() {
            return Err(SpecError::invariant(
                "constraints",
                "compliance minimization needs at least one constraint",
            ));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let ok = match c.kind {
                ConstraintKind::VolumeFraction => c.bound > 0.0 && c.bound < 1.0,
                ConstraintKind::VonMisesStress => c.bound > 0.0 && c.bound.is_finite(),
            };
            if !ok {
                let message = match c.kind {
                    ConstraintKind::VolumeFraction => "volume fraction must lie in (0, 1)",
                    ConstraintKind::VonMisesStress => "stress bound must be positive",
                };
                return Err(SpecError::invariant(format!("constraints[{i}].bound"), message));
            }
        }
        if self.num_inequality != self.constraints.len() {
            return Err(SpecError::invariant(
                "num_inequality",
                format!("expected {} to match the constraint list", self.constraints.len()),
            ));
        }
        if self.num_equality < 1 {
            return Err(SpecError::invariant(
                "num_equality",
                "the equilibrium residual always counts as one equality constraint",
            ));
        }
        let uses_stress = self.objective.kind == ObjectiveKind::PnormStress
            || self.constraints.iter().any(|c| c.kind == ConstraintKind::VonMisesStress);
        match (uses_stress, &self.stress) {
            (true, None) => {
                return Err(SpecError::invariant("stress", "required when stress is an objective or constraint"))
            }
            (false, Some(_)) => {
                return Err(SpecError::invariant("stress", "only allowed when stress is an objective or constraint"))
            }
            _ => {}
        }
        Ok(())
    }

    fn validate_parameters(&self) -> Result<(), SpecError> {
        let s = &self.simp;
        if !(s.penal >= 1.0) {
            return Err(SpecError::invariant("simp.penal", "must be at least 1"));
        }
        if !(s.e0 > 0.0) {
            return Err(SpecError::invariant("simp.e0", "must be positive"));
        }
        if !(s.emin > 0.0 && s.emin <= 1e-3 * s.e0) {
            return Err(SpecError::invariant("simp.emin", "must satisfy 0 < emin ≪ e0"));
        }
        if !(s.nu > 0.0 && s.nu < 0.5) {
            return Err(SpecError::invariant("simp.nu", "must lie in (0, 0.5)"));
        }

        let r = &self.regularization;
        if !(r.r_min > 0.0 && r.r_min.is_finite()) {
            return Err(SpecError::invariant("regularization.r_min", "must be positive"));
        }
        if !(r.eta > 0.0 && r.eta < 1.0) {
            return Err(SpecError::invariant("regularization.eta", "must lie in (0, 1)"));
        }
        if r.beta_schedule.is_empty() {
            return Err(SpecError::invariant("regularization.beta_schedule", "must not be empty"));
        }
        for (i, w) in r.beta_schedule.windows(2).enumerate() {
            if w[1].iteration <= w[0].iteration {
                return Err(SpecError::invariant(
                    format!("regularization.beta_schedule[{}].iteration", i + 1),
                    "breakpoints must be sorted by iteration",
                ));
            }
            if w[1].beta <= w[0].beta {
                return Err(SpecError::invariant(
                    format!("regularization.beta_schedule[{}].beta", i + 1),
                    "beta must increase strictly along the schedule",
                ));
            }
        }
        if !(r.beta_schedule[0].beta > 0.0) {
            return Err(SpecError::invariant("regularization.beta_schedule[0].beta", "must be positive"));
        }

        if let Some(st) = &self.stress {
            if !(st.pnorm_exponent >= 2.0) {
                return Err(SpecError::invariant("stress.pnorm_exponent", "must be at least 2"));
            }
            if !(st.relaxation_exponent > 0.0 && st.relaxation_exponent <= 1.0) {
                return Err(SpecError::invariant("stress.relaxation_exponent", "must lie in (0, 1]"));
            }
        }

        let o = &self.optimizer;
        if !(o.move_limit > 0.0 && o.move_limit <= 0.5) {
            return Err(SpecError::invariant("optimizer.move_limit", "must lie in (0, 0.5]"));
        }
        if o.max_iterations < 1 {
            return Err(SpecError::invariant("optimizer.max_iterations", "must be at least 1"));
        }
        if !(o.change_tolerance > 0.0) {
            return Err(SpecError::invariant("optimizer.change_tolerance", "must be positive"));
        }
        if o.objective_window < 1 {
            return Err(SpecError::invariant("optimizer.objective_window", "must be at least 1"));
        }
        Ok(())
    }
}
