//! Adjoint sensitivities of compliance, the p-norm stress measure and volume,
//! plus the central-difference oracle used to check them.

use serde::{Deserialize, Serialize};

use crate::fem::{bilinear_form, FemError, FemModel, FemSolution, GlobalSystem};
use crate::problem::{SimpParams, StressParams};
use crate::regularization::{DensityChain, FilterOperator};

/// Lower bound on `ρ̄` inside the relaxation derivative `q·ρ̄^(q−1)`.
pub const RELAXATION_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointSolution {
    pub psi: Vec<f64>,
    pub phi_value: f64,
    /// `dΦ/dρ` over the raw design variables.
    pub gradient: Vec<f64>,
    /// `‖Kψ + (∂Φ/∂u)ᵀ‖ / ‖(∂Φ/∂u)ᵀ‖` over free dofs.
    pub adjoint_residual: f64,
    /// Elements whose `ρ̄` hit [`RELAXATION_CLAMP`].
    pub clamped_elements: usize,
}

fn masked(model: &FemModel, mut g: Vec<f64>) -> Vec<f64> {
    for (e, v) in g.iter_mut().enumerate() {
        if !model.mesh().is_active(e) {
            *v = 0.0;
        }
    }
    g
}

/// Compliance `Fᵀu` is self-adjoint: `ψ = −u`.
pub fn compliance_gradient(
    model: &FemModel,
    solution: &FemSolution,
    chain: &DensityChain,
    filter: &FilterOperator,
    simp: &SimpParams,
) -> AdjointSolution {
    let g_bar: Vec<f64> = (0..model.mesh().n_elements())
        .map(|e| -simp.modulus_derivative(chain.rho_bar[e]) * solution.element_energy[e])
        .collect();
    let gradient = masked(model, chain.chain(filter, &masked(model, g_bar)));
    AdjointSolution {
        psi: solution.displacement.iter().map(|u| -u).collect(),
        phi_value: solution.compliance,
        gradient,
        adjoint_residual: 0.0,
        clamped_elements: 0,
    }
}

fn relaxed_stresses(model: &FemModel, solution: &FemSolution, rho_bar: &[f64], stress: &StressParams) -> Vec<f64> {
    let vm = crate::fem::element_von_mises(solution);
    (0..vm.len())
        .map(|e| if model.mesh().is_active(e) { rho_bar[e].max(0.0).powf(stress.relaxation_exponent) * vm[e] } else { 0.0 })
        .collect()
}

fn pnorm(values: &[f64], p: f64) -> f64 {
    let m = values.iter().fold(0.0f64, |m, &v| m.max(v));
    if m == 0.0 {
        return 0.0;
    }
    // scaled to keep s^P representable
    m * values.iter().map(|&v| (v / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `Φ = (Σ_active (ρ̄ₑ^q σ_vm,e)^P)^(1/P)`.
pub fn stress_pnorm_value(model: &FemModel, solution: &FemSolution, rho_bar: &[f64], stress: &StressParams) -> f64 {
    pnorm(&relaxed_stresses(model, solution, rho_bar, stress), stress.pnorm_exponent)
}

pub fn stress_pnorm_gradient(
    model: &FemModel,
    solution: &FemSolution,
    system: &GlobalSystem,
    chain: &DensityChain,
    filter: &FilterOperator,
    simp: &SimpParams,
    stress: &StressParams,
) -> Result<AdjointSolution, FemError> {
    let mesh = model.mesh();
    let n = mesh.n_elements();
    let p = stress.pnorm_exponent;
    let q = stress.relaxation_exponent;
    let s = relaxed_stresses(model, solution, &chain.rho_bar, stress);
    let phi = pnorm(&s, p);
    if phi == 0.0 {
        return Ok(AdjointSolution {
            psi: vec![0.0; mesh.n_dofs()],
            phi_value: 0.0,
            gradient: vec![0.0; n],
            adjoint_residual: 0.0,
            clamped_elements: 0,
        });
    }

    // ∂Φ/∂sₑ = (sₑ/Φ)^(P−1)
    let outer: Vec<f64> = s.iter().map(|&se| (se / phi).powf(p - 1.0)).collect();
    let sm = model.stress_matrix();
    let mut dphi_du = vec![0.0; mesh.n_dofs()];
    let mut explicit = vec![0.0; n];
    let mut clamped = 0;
    for e in 0..n {
        if !mesh.is_active(e) || outer[e] == 0.0 {
            continue;
        }
        let [sx, sy, txy] = solution.element_stress[e];
        let vm = crate::fem::von_mises([sx, sy, txy]);
        if vm == 0.0 {
            continue;
        }
        let rb = chain.rho_bar[e];
        let rb_clamped = if rb < RELAXATION_CLAMP {
            clamped += 1;
            RELAXATION_CLAMP
        } else {
            rb
        };
        explicit[e] = outer[e] * q * rb_clamped.powf(q - 1.0) * vm;
        let dvm = [(sx - 0.5 * sy) / vm, (sy - 0.5 * sx) / vm, 3.0 * txy / vm];
        let w = outer[e] * rb.max(0.0).powf(q);
        let dofs = mesh.element_dofs(e);
        for (j, &d) in dofs.iter().enumerate() {
            dphi_du[d] += w * (dvm[0] * sm[0][j] + dvm[1] * sm[1][j] + dvm[2] * sm[2][j]);
        }
    }

    let rhs: Vec<f64> = dphi_du.iter().map(|v| -v).collect();
    let (psi, _) = system.solve(&rhs)?;
    let adjoint_residual = system.relative_residual(&psi, &rhs);

    let ke = model.element_matrix();
    let g_bar: Vec<f64> = (0..n)
        .map(|e| {
            if !mesh.is_active(e) {
                return 0.0;
            }
            let ue = model.element_displacement(&solution.displacement, e);
            let pe = model.element_displacement(&psi, e);
            explicit[e] + simp.modulus_derivative(chain.rho_bar[e]) * bilinear_form(ke, &pe, &ue)
        })
        .collect();
    let gradient = masked(model, chain.chain(filter, &g_bar));
    Ok(AdjointSolution { psi, phi_value: phi, gradient, adjoint_residual, clamped_elements: clamped })
}

/// Active-element volume fraction of `ρ̄`.
pub fn volume_fraction(model: &FemModel, rho_bar: &[f64]) -> f64 {
    let mesh = model.mesh();
    (0..mesh.n_elements()).filter(|&e| mesh.is_active(e)).map(|e| rho_bar[e]).sum::<f64>() / mesh.n_active() as f64
}

pub fn volume_gradient(model: &FemModel, chain: &DensityChain, filter: &FilterOperator) -> Vec<f64> {
    let mesh = model.mesh();
    let w = 1.0 / mesh.n_active() as f64;
    let g_bar: Vec<f64> = (0..mesh.n_elements()).map(|e| if mesh.is_active(e) { w } else { 0.0 }).collect();
    masked(model, chain.chain(filter, &g_bar))
}

/// Central-difference relative errors `|FD − analytic| / max(|FD|, |analytic|)`
/// at the given indices.
pub fn finite_difference_check(
    phi: impl Fn(&[f64]) -> f64,
    rho: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> Vec<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    indices
        .iter()
        .map(|&i| {
            let mut plus = rho.to_vec();
            plus[i] += step;
            let mut minus = rho.to_vec();
            minus[i] -= step;
            let fd = (phi(&plus) - phi(&minus)) / (2.0 * step);
            let scale = fd.abs().max(analytic[i].abs());
            if scale == 0.0 {
                0.0
            } else {
                (fd - analytic[i]).abs() / scale
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, LinearSolverSettings};
    use crate::problem::{builtin_benchmark, Benchmark, LoadDistribution, LoadLocation, Point, ProblemSpec, Rect};
    use crate::regularization::build_filter;
    use rand::seq::index::sample;
    use rand::SeedableRng;

    struct Instance {
        spec: ProblemSpec,
        model: FemModel,
        filter: FilterOperator,
        beta: f64,
    }

    impl Instance {
        fn new(spec: ProblemSpec, beta: f64) -> Self {
            let mesh = build_mesh(&spec.geometry).unwrap();
            let filter = build_filter(&mesh, spec.regularization.r_min);
            let model =
                FemModel::new(mesh, &spec.supports, &spec.loads, &spec.simp, LinearSolverSettings::Direct).unwrap();
            Self { spec, model, filter, beta }
        }

        fn chain(&self, rho: &[f64]) -> DensityChain {
            DensityChain::evaluate(&self.filter, rho, self.beta, self.spec.regularization.eta)
        }

        fn compliance(&self, rho: &[f64]) -> f64 {
            self.model.solve(&self.chain(rho).rho_bar, &self.spec.simp).unwrap().0.compliance
        }

        fn stress(&self, rho: &[f64]) -> f64 {
            let chain = self.chain(rho);
            let sol = self.model.solve(&chain.rho_bar, &self.spec.simp).unwrap().0;
            stress_pnorm_value(&self.model, &sol, &chain.rho_bar, self.spec.stress.as_ref().unwrap())
        }

        fn active(&self) -> Vec<usize> {
            (0..self.model.mesh().n_elements()).filter(|&e| self.model.mesh().is_active(e)).collect()
        }
    }

    fn small_cantilever() -> ProblemSpec {
        let mut spec = builtin_benchmark(Benchmark::Cantilever);
        spec.geometry.nx = 4;
        spec.geometry.ny = 2;
        spec.regularization.r_min = 1.5 * spec.geometry.element_size();
        spec
    }

    fn small_l_bracket() -> ProblemSpec {
        let mut spec = builtin_benchmark(Benchmark::LBracketStress);
        spec.geometry.nx = 6;
        spec.geometry.ny = 6;
        spec.geometry.void_regions = vec![Rect::new(0.5, 0.5, 1.0, 1.0)];
        spec.supports[0].end = Point::new(0.5, 1.0);
        spec.loads[0].location = LoadLocation::Point { x: 1.0, y: 0.5 };
        spec.regularization.r_min = 1.5 * spec.geometry.element_size();
        spec
    }

    fn random_indices(pool: &[usize], k: usize, seed: u64) -> Vec<usize> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, pool.len(), k.min(pool.len())).into_iter().map(|i| pool[i]).collect()
    }

    #[test]
    fn compliance_gradient_matches_finite_differences() {
        let inst = Instance::new(small_cantilever(), 1.0);
        let rho = vec![0.5; 8];
        let chain = inst.chain(&rho);
        let (sol, _) = inst.model.solve(&chain.rho_bar, &inst.spec.simp).unwrap();
        let adj = compliance_gradient(&inst.model, &sol, &chain, &inst.filter, &inst.spec.simp);
        assert!(adj.gradient.iter().all(|&g| g <= 0.0));
        let idx = random_indices(&inst.active(), 10, 11);
        let errs = finite_difference_check(|r| inst.compliance(r), &rho, &adj.gradient, &idx, 1e-6);
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-5, "max relative error {worst:e}");
    }

    #[test]
    fn compliance_adjoint_is_negated_state() {
        let inst = Instance::new(small_cantilever(), 1.0);
        let chain = inst.chain(&[0.5; 8]);
        let (sol, sys) = inst.model.solve(&chain.rho_bar, &inst.spec.simp).unwrap();
        let adj = compliance_gradient(&inst.model, &sol, &chain, &inst.filter, &inst.spec.simp);
        // same system with negated right-hand side
        let neg_f: Vec<f64> = inst.model.force().iter().map(|f| -f).collect();
        let (psi, _) = sys.solve(&neg_f).unwrap();
        assert_eq!(adj.psi, psi);
    }

    #[test]
    fn zero_load_gives_zero_gradients() {
        let mut spec = small_cantilever();
        spec.loads[0].force = Point::new(0.0, 0.0);
        let inst = Instance::new(spec, 1.0);
        let chain = inst.chain(&[0.5; 8]);
        let (sol, sys) = inst.model.solve(&chain.rho_bar, &inst.spec.simp).unwrap();
        let c = compliance_gradient(&inst.model, &sol, &chain, &inst.filter, &inst.spec.simp);
        assert!(c.gradient.iter().all(|&g| g == 0.0));
        let s = stress_pnorm_gradient(
            &inst.model,
            &sol,
            &sys,
            &chain,
            &inst.filter,
            &inst.spec.simp,
            &StressParams::default(),
        )
        .unwrap();
        assert_eq!(s.phi_value, 0.0);
        assert!(s.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stress_gradient_matches_finite_differences() {
        let inst = Instance::new(small_l_bracket(), 1.0);
        let n = inst.model.mesh().n_elements();
        let rho = vec![0.5; n];
        let chain = inst.chain(&rho);
        let (sol, sys) = inst.model.solve(&chain.rho_bar, &inst.spec.simp).unwrap();
        let stress = inst.spec.stress.unwrap();
        let adj =
            stress_pnorm_gradient(&inst.model, &sol, &sys, &chain, &inst.filter, &inst.spec.simp, &stress).unwrap();
        assert!(adj.adjoint_residual <= 1e-8);
        let idx = random_indices(&inst.active(), 10, 23);
        let errs = finite_difference_check(|r| inst.stress(r), &rho, &adj.gradient, &idx, 1e-6);
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-4, "max relative error {worst:e}");
    }

    #[test]
    fn pnorm_elementary_values() {
        assert_eq!(pnorm(&[3.0, 4.0], 2.0), 5.0);
        assert_eq!(pnorm(&[0.0, 0.0], 8.0), 0.0);
        assert_eq!(pnorm(&[2.5], 8.0), 2.5);
    }

    #[test]
    fn unit_exponent_sums_element_gradients() {
        let inst = Instance::new(small_l_bracket(), 1.0);
        let n = inst.model.mesh().n_elements();
        let chain = inst.chain(&vec![0.5; n]);
        let (sol, sys) = inst.model.solve(&chain.rho_bar, &inst.spec.simp).unwrap();
        let stress = StressParams { pnorm_exponent: 1.0, relaxation_exponent: 0.5 };
        let total = stress_pnorm_gradient(&inst.model, &sol, &sys, &chain, &inst.filter, &inst.spec.simp, &stress)
            .unwrap();
        let s = relaxed_stresses(&inst.model, &sol, &chain.rho_bar, &stress);
        assert!((total.phi_value - s.iter().sum::<f64>()).abs() <= 1e-12 * total.phi_value);
        // P = 1 is linear in the element terms: compare with the FD of the sum
        let idx = random_indices(&inst.active(), 5, 3);
        let sum = |r: &[f64]| {
            let c = inst.chain(r);
            let sol = inst.model.solve(&c.rho_bar, &inst.spec.simp).unwrap().0;
            relaxed_stresses(&inst.model, &sol, &c.rho_bar, &stress).iter().sum::<f64>()
        };
        let errs = finite_difference_check(sum, &vec![0.5; n], &total.gradient, &idx, 1e-6);
        assert!(errs.iter().all(|&e| e <= 1e-4), "{errs:?}");
    }

    #[test]
    fn volume_gradient_identity_limit() {
        let mut spec = small_cantilever();
        spec.regularization.r_min = 0.1;
        let inst = Instance::new(spec, 1e-8);
        let chain = inst.chain(&[0.3; 8]);
        let g = volume_gradient(&inst.model, &chain, &inst.filter);
        assert!(g.iter().all(|&v| (v - 1.0 / 8.0).abs() < 1e-9));
    }

    #[test]
    fn volume_gradient_matches_finite_differences() {
        let inst = Instance::new(small_l_bracket(), 4.0);
        let n = inst.model.mesh().n_elements();
        let rho: Vec<f64> = (0..n).map(|e| 0.2 + 0.6 * (e as f64 / n as f64)).collect();
        let chain = inst.chain(&rho);
        let g = volume_gradient(&inst.model, &chain, &inst.filter);
        assert!(g.iter().all(|&v| v >= 0.0));
        let vol = |r: &[f64]| volume_fraction(&inst.model, &inst.chain(r).rho_bar);
        let errs = finite_difference_check(vol, &rho, &g, &inst.active(), 1e-6);
        assert!(errs.iter().all(|&e| e <= 1e-6), "{errs:?}");
    }

    #[test]
    fn linear_functional_is_exact() {
        let n = 16;
        let rho: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let ones = vec![1.0; n];
        let idx: Vec<usize> = (0..n).collect();
        let step = 2f64.powi(-20);
        let errs = finite_difference_check(|r| r.iter().sum(), &rho, &ones, &idx, step);
        assert!(errs.iter().all(|&e| e <= 1e-10));
    }

    #[test]
    fn nodal_and_distributed_loads_share_total_force() {
        let mut spec = small_l_bracket();
        spec.loads[0].distribution = LoadDistribution::Nodal;
        let a = Instance::new(spec.clone(), 1.0);
        spec.loads[0].distribution = LoadDistribution::DistributedOverNNodes { n: 3 };
        let b = Instance::new(spec, 1.0);
        let sum = |m: &FemModel| m.force().iter().sum::<f64>();
        assert!((sum(&a.model) - sum(&b.model)).abs() < 1e-14);
    }
}
