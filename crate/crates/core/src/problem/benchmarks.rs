use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::*;

/// The three built-in benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Cantilever,
    MbbMidRight,
    LBracketStress,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] =
        [Benchmark::Cantilever, Benchmark::MbbMidRight, Benchmark::LBracketStress];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Cantilever => "cantilever",
            Benchmark::MbbMidRight => "mbb_mid_right",
            Benchmark::LBracketStress => "l_bracket_stress",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected cantilever, mbb_mid_right or l_bracket_stress)"))
    }
}

/// `β = 1` until iteration 50, then doubled every 50 iterations up to 64.
pub fn default_beta_schedule() -> Vec<BetaBreakpoint> {
    let mut schedule = vec![BetaBreakpoint { iteration: 0, beta: 1.0 }];
    let mut beta = 1.0;
    let mut iteration = 0;
    while beta < 64.0 {
        beta *= 2.0;
        iteration += 50;
        schedule.push(BetaBreakpoint { iteration, beta });
    }
    schedule
}

/// Filter radius of one and a half element sizes.
pub fn default_r_min(geometry: &DomainGeometry) -> f64 {
    1.5 * geometry.element_size()
}

fn distributed_point_load(x: f64, y: f64, fy: f64) -> LoadRegion {
    LoadRegion {
        location: LoadLocation::Point { x, y },
        force: Point::new(0.0, fy),
        distribution: LoadDistribution::DistributedOverNNodes { n: 3 },
    }
}

fn assemble(
    geometry: DomainGeometry,
    supports: Vec<SupportRegion>,
    loads: Vec<LoadRegion>,
    objective: ObjectiveKind,
    volume_fraction: f64,
) -> ProblemSpec {
    let regularization = RegularizationParams {
        r_min: default_r_min(&geometry),
        eta: 0.5,
        beta_schedule: default_beta_schedule(),
    };
    let stress = (objective == ObjectiveKind::PnormStress).then(StressParams::default);
    ProblemSpec {
        geometry,
        supports,
        loads,
        objective: ObjectiveSpec { kind: objective },
        constraints: vec![ConstraintSpec { kind: ConstraintKind::VolumeFraction, bound: volume_fraction }],
        num_inequality: 1,
        num_equality: 1,
        simp: SimpParams::default(),
        regularization,
        stress,
        optimizer: OptimizerParams::defaults_for(objective),
        provenance: Provenance::User,
    }
}

pub fn builtin_benchmark(name: Benchmark) -> ProblemSpec {
    match name {
        Benchmark::Cantilever => assemble(
            DomainGeometry {
                kind: GeometryKind::Rectangle,
                width: 2.0,
                height: 1.0,
                nx: 120,
                ny: 40,
                void_regions: Vec::new(),
            },
            vec![SupportRegion {
                start: Point::new(0.0, 0.0),
                end: Point::new(0.0, 1.0),
                fixed: FixedComponents::Both,
            }],
            vec![distributed_point_load(2.0, 0.5, -1.0)],
            ObjectiveKind::Compliance,
            0.4,
        ),
        Benchmark::MbbMidRight => assemble(
            DomainGeometry {
                kind: GeometryKind::Rectangle,
                width: 3.0,
                height: 1.0,
                nx: 120,
                ny: 40,
                void_regions: Vec::new(),
            },
            vec![
                // symmetry rollers along the left edge
                SupportRegion {
                    start: Point::new(0.0, 0.0),
                    end: Point::new(0.0, 1.0),
                    fixed: FixedComponents::X,
                },
                // vertical support at the bottom-left corner node only
                SupportRegion {
                    start: Point::new(0.0, 0.0),
                    end: Point::new(0.01, 0.0),
                    fixed: FixedComponents::Y,
                },
            ],
            vec![distributed_point_load(3.0, 0.5, -1.0)],
            ObjectiveKind::Compliance,
            0.5,
        ),
        Benchmark::LBracketStress => assemble(
            DomainGeometry {
                kind: GeometryKind::LBracket,
                width: 1.0,
                height: 1.0,
                nx: 100,
                ny: 100,
                void_regions: vec![Rect::new(0.4, 0.4, 1.0, 1.0)],
            },
            vec![SupportRegion {
                start: Point::new(0.0, 1.0),
                end: Point::new(0.4, 1.0),
                fixed: FixedComponents::Both,
            }],
            vec![distributed_point_load(1.0, 0.4, -1.0)],
            ObjectiveKind::PnormStress,
            0.4,
        ),
    }
}
