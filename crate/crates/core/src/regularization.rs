//! Density filter, Heaviside projection and β continuation.

use crate::fem::StructuredMesh;
use crate::problem::BetaBreakpoint;

/// Row-normalized linear hat filter `ρ̃ = W ρ` stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOperator {
    pub r_min: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

pub fn build_filter(mesh: &StructuredMesh, r_min: f64) -> FilterOperator {
    assert!(r_min > 0.0, "filter radius must be positive");
    let reach_x = (r_min / mesh.dx).ceil() as isize;
    let reach_y = (r_min / mesh.dy).ceil() as isize;
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    for e in 0..mesh.n_elements() {
        if !mesh.is_active(e) {
            cols.push(e);
            weights.push(1.0);
            row_ptr.push(cols.len());
            continue;
        }
        let (ex, ey) = mesh.element_position(e);
        let ce = mesh.centroid(e);
        let start = cols.len();
        for j in (ey as isize - reach_y).max(0)..=(ey as isize + reach_y).min(mesh.ny as isize - 1) {
            for i in (ex as isize - reach_x).max(0)..=(ex as isize + reach_x).min(mesh.nx as isize - 1) {
                let k = mesh.element_index(i as usize, j as usize);
                if !mesh.is_active(k) {
                    continue;
                }
                let w = r_min - ce.distance(mesh.centroid(k));
                if w > 0.0 {
                    cols.push(k);
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights[start..].iter().sum();
        weights[start..].iter_mut().for_each(|w| *w /= total);
        row_ptr.push(cols.len());
    }
    FilterOperator { r_min, row_ptr, cols, weights }
}

impl FilterOperator {
    pub fn identity(n: usize) -> Self {
        Self { r_min: 0.0, row_ptr: (0..=n).collect(), cols: (0..n).collect(), weights: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, e: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[e]..self.row_ptr[e + 1];
        self.cols[range.clone()].iter().copied().zip(self.weights[range].iter().copied())
    }

    pub fn is_identity(&self) -> bool {
        (0..self.len()).all(|e| {
            let mut row = self.row(e);
            matches!((row.next(), row.next()), (Some((c, w)), None) if c == e && w == 1.0)
        })
    }

    /// `ρ̃ = W ρ`.
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        assert_eq!(rho.len(), self.len(), "density field length mismatch");
        (0..self.len()).map(|e| self.row(e).map(|(k, w)| w * rho[k]).sum()).collect()
    }

    /// `Wᵀ g`, used to chain gradients back to the design variables.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.len(), "gradient length mismatch");
        let mut out = vec![0.0; self.len()];
        for (e, &ge) in g.iter().enumerate() {
            for (k, w) in self.row(e) {
                out[k] += w * ge;
            }
        }
        out
    }
}

pub fn apply_filter(filter: &FilterOperator, rho: &[f64]) -> Vec<f64> {
    filter.apply(rho)
}

fn tanh_denominator(beta: f64, eta: f64) -> f64 {
    (beta * eta).tanh() + (beta * (1.0 - eta)).tanh()
}

/// Smoothed Heaviside `[tanh(βη) + tanh(β(ρ̃−η))] / [tanh(βη) + tanh(β(1−η))]`.
pub fn project_value(rho_tilde: f64, beta: f64, eta: f64) -> f64 {
    ((beta * eta).tanh() + (beta * (rho_tilde - eta)).tanh()) / tanh_denominator(beta, eta)
}

pub fn project_derivative_value(rho_tilde: f64, beta: f64, eta: f64) -> f64 {
    let t = (beta * (rho_tilde - eta)).tanh();
    beta * (1.0 - t * t) / tanh_denominator(beta, eta)
}

pub fn heaviside_project(rho_tilde: &[f64], beta: f64, eta: f64) -> Vec<f64> {
    rho_tilde.iter().map(|&r| project_value(r, beta, eta)).collect()
}

pub fn projection_derivative(rho_tilde: &[f64], beta: f64, eta: f64) -> Vec<f64> {
    rho_tilde.iter().map(|&r| project_derivative_value(r, beta, eta)).collect()
}

/// β of the last breakpoint at or before `iteration`.
pub fn continuation_step(iteration: usize, schedule: &[BetaBreakpoint]) -> f64 {
    schedule
        .iter()
        .take_while(|b| b.iteration <= iteration)
        .last()
        .or_else(|| schedule.first())
        .map(|b| b.beta)
        .expect("beta schedule must not be empty")
}

/// Filter → project chain with its cached derivative.
#[derive(Debug, Clone)]
pub struct DensityChain {
    pub rho_tilde: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub d_bar: Vec<f64>,
}

impl DensityChain {
    pub fn evaluate(filter: &FilterOperator, rho: &[f64], beta: f64, eta: f64) -> Self {
        let rho_tilde = filter.apply(rho);
        let rho_bar = heaviside_project(&rho_tilde, beta, eta);
        let d_bar = projection_derivative(&rho_tilde, beta, eta);
        Self { rho_tilde, rho_bar, d_bar }
    }

    /// Maps `∂Φ/∂ρ̄` to `∂Φ/∂ρ` via `Wᵀ (dρ̄/dρ̃ ⊙ g)`.
    pub fn chain(&self, filter: &FilterOperator, g_bar: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = g_bar.iter().zip(&self.d_bar).map(|(g, d)| g * d).collect();
        filter.apply_transpose(&scaled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_mesh;
    use crate::problem::{default_beta_schedule, DomainGeometry, GeometryKind};
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize) -> StructuredMesh {
        build_mesh(&DomainGeometry {
            kind: GeometryKind::Rectangle,
            width: nx as f64,
            height: ny as f64,
            nx,
            ny,
            void_regions: vec![],
        })
        .unwrap()
    }

    #[test]
    fn small_radius_is_identity() {
        let f = build_filter(&grid(5, 4), 1.0);
        assert!(f.is_identity());
        let rho: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        assert_eq!(f.apply(&rho), rho);
    }

    #[test]
    fn strip_center_weights() {
        // 3×1 strip, r = 1.5: neighbor weight 0.5, self weight 1.5.
        let f = build_filter(&grid(3, 1), 1.5);
        let row: Vec<(usize, f64)> = f.row(1).collect();
        let w = 0.5 / (1.5 + 2.0 * 0.5);
        assert_eq!(row.len(), 3);
        assert!((row[0].1 - w).abs() < 1e-15);
        assert!((row[1].1 - (1.0 - 2.0 * w)).abs() < 1e-15);
        assert!((w - 0.2).abs() < 1e-15);
    }

    #[test]
    fn checkerboard_is_smeared() {
        let mesh = grid(8, 8);
        let f = build_filter(&mesh, 2.0);
        let rho: Vec<f64> = (0..64)
            .map(|e| {
                let (i, j) = mesh.element_position(e);
                ((i + j) % 2) as f64
            })
            .collect();
        let out = f.apply(&rho);
        for e in 0..64 {
            assert!(out[e] > 0.0 && out[e] < 1.0);
        }
        assert!(f.apply(&[0.0; 64]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_fixed_points() {
        for beta in [0.1, 1.0, 8.0, 64.0] {
            assert!((project_value(0.5, beta, 0.5) - 0.5).abs() < 1e-15);
            assert!(project_value(0.0, beta, 0.3).abs() < 1e-15);
            assert!((project_value(1.0, beta, 0.7) - 1.0).abs() < 1e-15);
        }
        assert!((project_value(0.6, 64.0, 0.5) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn derivative_limits() {
        assert!((project_derivative_value(0.3, 1e-6, 0.5) - 1.0).abs() < 1e-9);
        for d in [0.05, 0.2, 0.4] {
            let a = project_derivative_value(0.5 - d, 10.0, 0.5);
            let b = project_derivative_value(0.5 + d, 10.0, 0.5);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let r: f64 = rng.random_range(0.05..0.95);
            let beta: f64 = rng.random_range(0.5..32.0);
            let eta: f64 = rng.random_range(0.1..0.9);
            let h = 1e-6;
            let fd = (project_value(r + h, beta, eta) - project_value(r - h, beta, eta)) / (2.0 * h);
            let an = project_derivative_value(r, beta, eta);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "r={r} beta={beta} eta={eta}");
        }
    }

    #[test]
    fn continuation_on_default_schedule() {
        let s = default_beta_schedule();
        assert_eq!(continuation_step(0, &s), 1.0);
        assert_eq!(continuation_step(125, &s), 4.0);
        assert_eq!(continuation_step(10_000, &s), 64.0);
        let single = [BetaBreakpoint { iteration: 0, beta: 3.0 }];
        assert!((0..500).all(|k| continuation_step(k, &single) == 3.0));
    }

    fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..=1.0f64, n)
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(nx in 1usize..9, ny in 1usize..9, r in 0.3f64..3.5) {
            let f = build_filter(&grid(nx, ny), r);
            for e in 0..f.len() {
                let s: f64 = f.row(e).map(|(_, w)| w).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(f.row(e).all(|(_, w)| w >= 0.0));
            }
        }

        #[test]
        fn composition_stays_in_unit_box(rho in field(30), beta in 0.1f64..128.0, eta in 0.05f64..0.95) {
            let f = build_filter(&grid(6, 5), 1.7);
            let out = heaviside_project(&f.apply(&rho), beta, eta);
            prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn filter_is_linear(a in field(30), b in field(30), s in -2.0f64..2.0, t in -2.0f64..2.0) {
            let f = build_filter(&grid(6, 5), 2.2);
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + t * y).collect();
            let lhs = f.apply(&mix);
            let fa = f.apply(&a);
            let fb = f.apply(&b);
            for i in 0..30 {
                prop_assert!((lhs[i] - (s * fa[i] + t * fb[i])).abs() <= 1e-12);
            }
        }

        #[test]
        fn projection_monotone_in_rho(x in 0.0f64..1.0, y in 0.0f64..1.0, beta in 0.1f64..64.0, eta in 0.05f64..0.95) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(project_value(lo, beta, eta) <= project_value(hi, beta, eta) + 1e-15);
        }

        #[test]
        // Holds for the symmetric threshold only; for other η the crossing
        // point of the projection moves away from η at small β.
        fn projection_monotone_in_beta(r in 0.0f64..1.0, b1 in 0.1f64..64.0, b2 in 0.1f64..64.0) {
            let eta = 0.5;
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let (plo, phi) = (project_value(r, lo, eta), project_value(r, hi, eta));
            if r > eta {
                prop_assert!(phi >= plo - 1e-12);
            } else if r < eta {
                prop_assert!(phi <= plo + 1e-12);
            }
        }

        #[test]
        fn chain_rule_matches_finite_differences(rho in prop::collection::vec(0.1f64..0.9, 20), k in 0usize..20, beta in 0.5f64..16.0) {
            let f = build_filter(&grid(5, 4), 1.6);
            let weights: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.1).collect();
            let phi = |r: &[f64]| -> f64 {
                let bar = heaviside_project(&f.apply(r), beta, 0.5);
                bar.iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            let chain = DensityChain::evaluate(&f, &rho, beta, 0.5);
            let grad = chain.chain(&f, &weights);
            let h = 1e-6;
            let mut plus = rho.clone();
            plus[k] += h;
            let mut minus = rho.clone();
            minus[k] -= h;
            let fd = (phi(&plus) - phi(&minus)) / (2.0 * h);
            prop_assert!((fd - grad[k]).abs() <= 1e-6 * grad[k].abs().max(1.0));
        }
    }
}
