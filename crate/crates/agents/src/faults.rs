//! Controlled fault injection for recovery experiments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use topopt_core::fem::LinearSolverSettings;
use topopt_core::plan::{choose_method, SolverConfig};
use topopt_core::problem::{
    BetaBreakpoint, ConstraintKind, ConstraintSpec, LoadLocation, ProblemSpec, StressParams,
};

/// Stress bound used by the wrong-constraint fault.
pub const WRONG_CONSTRAINT_BOUND: f64 = 500.0;

/// Iteration budget of the injected iterative solver; far too small for any
/// benchmark mesh.
pub const STARVED_CG_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Load moved to mid-width at the same height.
    LoadMismatch,
    /// Load moved into the centre of the first void region.
    LoadInVoid,
    /// Volume constraint replaced by a von Mises stress bound.
    WrongConstraint,
    /// Filter radius shrunk to half an element, with the filter check
    /// skipped on the first validation pass.
    SmallRMin,
    /// One β step to 2 at iteration 100 and nothing after.
    GentleBeta,
    /// Starved iterative linear solver.
    SolverFailure,
}

impl Fault {
    pub const ALL: [Fault; 6] = [
        Fault::LoadMismatch,
        Fault::LoadInVoid,
        Fault::WrongConstraint,
        Fault::SmallRMin,
        Fault::GentleBeta,
        Fault::SolverFailure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fault::LoadMismatch => "load-mismatch",
            Fault::LoadInVoid => "load-in-void",
            Fault::WrongConstraint => "wrong-constraint",
            Fault::SmallRMin => "small-rmin",
            Fault::GentleBeta => "gentle-beta",
            Fault::SolverFailure => "solver-failure",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fault::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Fault::ALL.iter().map(|f| f.name()).collect();
            format!("unknown fault `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// The Validator's fixed check list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Objective matches the query.
    Intent,
    /// Loads where the query puts them, supports not swallowed by voids.
    BoundaryConditions,
    /// Stress parameters present when stress is used.
    MissingParams,
    /// Element aspect ratio within [0.5, 2].
    AspectRatio,
    /// Filter radius larger than one element.
    FilterRadius,
    /// Point loads spread over neighbouring nodes.
    PointLoad,
    /// Loads outside void regions.
    LoadInVoid,
}

impl Check {
    pub const ALL: [Check; 7] = [
        Check::Intent,
        Check::BoundaryConditions,
        Check::MissingParams,
        Check::AspectRatio,
        Check::FilterRadius,
        Check::PointLoad,
        Check::LoadInVoid,
    ];

    pub fn letter(self) -> char {
        (b'a' + Check::ALL.iter().position(|&c| c == self).expect("listed") as u8) as char
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Check::ALL
            .into_iter()
            .find(|c| t.len() == 1 && t.starts_with(c.letter()) || serde_json::to_value(c).ok() == Some(t.clone().into()))
            .ok_or_else(|| format!("unknown validator check `{s}` (expected a letter a-g)"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub faults: Vec<Fault>,
    /// Checks skipped on the first validation pass of the session.
    pub disabled_checks: Vec<Check>,
}

impl FaultPlan {
    pub fn has(&self, f: Fault) -> bool {
        self.faults.contains(&f)
    }

    pub fn initially_disabled(&self) -> Vec<Check> {
        let mut out = self.disabled_checks.clone();
        if self.has(Fault::SmallRMin) {
            out.push(Check::FilterRadius);
        }
        out.sort();
        out.dedup();
        out
    }

    /// Applies the spec-level faults to a fresh formulation.
    pub fn corrupt_spec(&self, spec: &ProblemSpec) -> Result<ProblemSpec, String> {
        let mut s = spec.clone();
        let h = s.geometry.element_size();
        for &fault in &self.faults {
            match fault {
                Fault::LoadMismatch => {
                    let load = s.loads.first_mut().ok_or("load-mismatch needs a load")?;
                    let y = load.location.anchor().y;
                    load.location = LoadLocation::Point { x: 0.5 * s.geometry.width, y };
                }
                Fault::LoadInVoid => {
                    let void = *s.geometry.void_regions.first().ok_or("load-in-void needs a domain with a void region")?;
                    let load = s.loads.first_mut().ok_or("load-in-void needs a load")?;
                    load.location =
                        LoadLocation::Point { x: 0.5 * (void.x0 + void.x1), y: 0.5 * (void.y0 + void.y1) };
                }
                Fault::WrongConstraint => {
                    s.constraints =
                        vec![ConstraintSpec { kind: ConstraintKind::VonMisesStress, bound: WRONG_CONSTRAINT_BOUND }];
                    s.num_inequality = 1;
                    s.stress.get_or_insert_with(StressParams::default);
                    s.optimizer.method = choose_method(&s);
                }
                Fault::SmallRMin => s.regularization.r_min = 0.5 * h,
                Fault::GentleBeta => {
                    s.regularization.beta_schedule = vec![
                        BetaBreakpoint { iteration: 0, beta: 1.0 },
                        BetaBreakpoint { iteration: 100, beta: 2.0 },
                    ];
                }
                Fault::SolverFailure => {}
            }
        }
        s.validate().map_err(|e| format!("fault injection produced an invalid spec: {e}"))?;
        Ok(s)
    }

    pub fn base_solver(&self) -> SolverConfig {
        let mut solver = SolverConfig::default();
        if self.has(Fault::SolverFailure) {
            solver.linear_solver = LinearSolverSettings::Iterative { max_iterations: STARVED_CG_ITERATIONS };
        }
        solver
    }
}
