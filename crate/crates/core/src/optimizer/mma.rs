use super::UpdateError;

const ASYMPTOTE_INIT: f64 = 0.5;
const ASYMPTOTE_SHRINK: f64 = 0.7;
const ASYMPTOTE_GROW: f64 = 1.2;
const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;
/// Cost of the elastic slack `y` in the subproblem.
const SLACK_LINEAR: f64 = 1000.0;
const SLACK_QUADRATIC: f64 = 1.0;

/// Moving-asymptote history carried between MMA iterations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MmaState {
    pub iteration: usize,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
}

/// Objective and constraints `gᵢ(x) ≤ 0` at the current point.
pub struct MmaInput<'a> {
    pub f0: f64,
    pub df0: &'a [f64],
    pub g: &'a [f64],
    pub dg: &'a [Vec<f64>],
}

struct Subproblem {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Subproblem {
    fn x_of(&self, lambda: &[f64]) -> Vec<f64> {
        (0..self.alpha.len())
            .map(|j| {
                let mut pj = self.p0[j];
                let mut qj = self.q0[j];
                for (i, l) in lambda.iter().enumerate() {
                    pj += l * self.p[i][j];
                    qj += l * self.q[i][j];
                }
                let (sp, sq) = (pj.sqrt(), qj.sqrt());
                let x = (sp * self.low[j] + sq * self.upp[j]) / (sp + sq);
                x.clamp(self.alpha[j], self.beta[j])
            })
            .collect()
    }

    fn constraint_model(&self, i: usize, x: &[f64]) -> f64 {
        (0..x.len()).map(|j| self.p[i][j] / (self.upp[j] - x[j]) + self.q[i][j] / (x[j] - self.low[j])).sum::<f64>()
            - self.b[i]
    }

    fn objective_model(&self, x: &[f64]) -> f64 {
        (0..x.len()).map(|j| self.p0[j] / (self.upp[j] - x[j]) + self.q0[j] / (x[j] - self.low[j])).sum()
    }

    /// Dual gradient component `∂W/∂λᵢ = hᵢ(x(λ)) − yᵢ(λ)`.
    fn dual_slope(&self, i: usize, lambda: &[f64]) -> f64 {
        let x = self.x_of(lambda);
        let y = ((lambda[i] - SLACK_LINEAR) / SLACK_QUADRATIC).max(0.0);
        self.constraint_model(i, &x) - y
    }
}

fn bisect_multiplier(sub: &Subproblem, lambda: &mut [f64], i: usize) -> Result<(), UpdateError> {
    lambda[i] = 0.0;
    if sub.dual_slope(i, lambda) <= 0.0 {
        return Ok(());
    }
    let mut hi = 1.0;
    let mut bracketed = false;
    for _ in 0..80 {
        lambda[i] = hi;
        if sub.dual_slope(i, lambda) < 0.0 {
            bracketed = true;
            break;
        }
        hi *= 2.0;
    }
    if !bracketed {
        return Err(UpdateError::DualFailed(format!("could not bracket the multiplier of constraint {i}")));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        lambda[i] = mid;
        if sub.dual_slope(i, lambda) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    lambda[i] = 0.5 * (lo + hi);
    Ok(())
}

/// Result of one MMA step including the value of the convex model at the
/// new point, for descent checks.
#[derive(Debug, Clone)]
pub struct MmaStep {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub model_objective_old: f64,
    pub model_objective_new: f64,
}

/// One step of the method of moving asymptotes for
/// `min f0(x) s.t. gᵢ(x) ≤ 0, xmin ≤ x ≤ xmax`.
pub fn mma_update(
    x: &[f64],
    input: &MmaInput<'_>,
    xmin: &[f64],
    xmax: &[f64],
    state: &mut MmaState,
    move_limit: f64,
) -> Result<MmaStep, UpdateError> {
    let n = x.len();
    let m = input.g.len();
    if input.df0.len() != n || input.dg.len() != m || input.dg.iter().any(|r| r.len() != n) {
        return Err(UpdateError::Degenerate("MMA gradient shapes do not match the design".into()));
    }
    if !input.f0.is_finite()
        || input.df0.iter().chain(input.g).chain(input.dg.iter().flatten()).any(|v| !v.is_finite())
    {
        return Err(UpdateError::NonFinite("MMA received non-finite function or gradient values".into()));
    }

    state.iteration += 1;
    let range: Vec<f64> = (0..n).map(|j| (xmax[j] - xmin[j]).max(1e-5)).collect();
    let (low, upp): (Vec<f64>, Vec<f64>) = if state.iteration <= 2 || state.low.len() != n {
        (0..n).map(|j| (x[j] - ASYMPTOTE_INIT * range[j], x[j] + ASYMPTOTE_INIT * range[j])).unzip()
    } else {
        (0..n)
            .map(|j| {
                let osc = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
                let factor = if osc < 0.0 {
                    ASYMPTOTE_SHRINK
                } else if osc > 0.0 {
                    ASYMPTOTE_GROW
                } else {
                    1.0
                };
                let l = x[j] - factor * (state.xold1[j] - state.low[j]);
                let u = x[j] + factor * (state.upp[j] - state.xold1[j]);
                (
                    l.clamp(x[j] - 10.0 * range[j], x[j] - 0.01 * range[j]),
                    u.clamp(x[j] + 0.01 * range[j], x[j] + 10.0 * range[j]),
                )
            })
            .unzip()
    };

    let alpha: Vec<f64> = (0..n)
        .map(|j| xmin[j].max(low[j] + ALBEFA * (x[j] - low[j])).max(x[j] - move_limit * range[j]))
        .collect();
    let beta: Vec<f64> = (0..n)
        .map(|j| xmax[j].min(upp[j] - ALBEFA * (upp[j] - x[j])).min(x[j] + move_limit * range[j]))
        .collect();

    let approx = |df: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (0..n)
            .map(|j| {
                let ux = upp[j] - x[j];
                let xl = x[j] - low[j];
                let (pos, neg) = (df[j].max(0.0), (-df[j]).max(0.0));
                let reg = 0.001 * (pos + neg) + RAA0 / range[j];
                ((pos + reg) * ux * ux, (neg + reg) * xl * xl)
            })
            .unzip()
    };
    let (p0, q0) = approx(input.df0);
    let mut p = Vec::with_capacity(m);
    let mut q = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for i in 0..m {
        let (pi, qi) = approx(&input.dg[i]);
        let bi = (0..n).map(|j| pi[j] / (upp[j] - x[j]) + qi[j] / (x[j] - low[j])).sum::<f64>() - input.g[i];
        p.push(pi);
        q.push(qi);
        b.push(bi);
    }
    let sub = Subproblem { alpha, beta, low: low.clone(), upp: upp.clone(), p0, q0, p, q, b };

    let mut lambda = vec![0.0; m];
    if m == 1 {
        bisect_multiplier(&sub, &mut lambda, 0)?;
    } else if m > 1 {
        // cyclic coordinate ascent on the concave dual
        let mut converged = false;
        for _ in 0..200 {
            let before = lambda.clone();
            for i in 0..m {
                bisect_multiplier(&sub, &mut lambda, i)?;
            }
            let delta = lambda.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if delta <= 1e-10 * lambda.iter().fold(1.0f64, |a, &b| a.max(b)) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(UpdateError::DualFailed("coordinate ascent on the MMA dual did not settle".into()));
        }
    }

    let x_new = sub.x_of(&lambda);
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(UpdateError::NonFinite("MMA subproblem produced non-finite design values".into()));
    }
    let step = MmaStep {
        model_objective_old: sub.objective_model(x),
        model_objective_new: sub.objective_model(&x_new),
        x: x_new,
        lambda,
    };
    state.xold2 = std::mem::replace(&mut state.xold1, x.to_vec());
    if state.xold2.is_empty() {
        state.xold2 = x.to_vec();
    }
    state.low = low;
    state.upp = upp;
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_descent_hits_move_limit() {
        let mut state = MmaState::default();
        let x = [0.5];
        let input = MmaInput { f0: 0.0, df0: &[-1.0], g: &[], dg: &[] };
        let step = mma_update(&x, &input, &[0.0], &[1.0], &mut state, 0.2).unwrap();
        assert!((step.x[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn inactive_constraint_model_descends() {
        let mut state = MmaState::default();
        let x = vec![0.3, 0.6, 0.5];
        let df0 = vec![-1.0, 0.5, -0.2];
        let input = MmaInput { f0: 1.0, df0: &df0, g: &[-0.5], dg: &[vec![0.1, 0.1, 0.1]] };
        let step = mma_update(&x, &input, &[0.0; 3], &[1.0; 3], &mut state, 0.2).unwrap();
        assert_eq!(step.lambda, vec![0.0]);
        assert!(step.model_objective_new < step.model_objective_old);
        assert!(step.x[0] > x[0] && step.x[1] < x[1] && step.x[2] > x[2]);
    }

    #[test]
    fn constrained_quadratic_converges_to_kkt_point() {
        // min Σ (x_j − 1)² s.t. Σ x_j / n − 0.3 ≤ 0 → x_j = 0.3
        let n = 5;
        let mut x = vec![0.5; n];
        let mut state = MmaState::default();
        for _ in 0..60 {
            let df0: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0)).collect();
            let f0 = x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum();
            let g = [x.iter().sum::<f64>() / n as f64 - 0.3];
            let dg = [vec![1.0 / n as f64; n]];
            let input = MmaInput { f0, df0: &df0, g: &g, dg: &dg };
            x = mma_update(&x, &input, &vec![0.0; n], &vec![1.0; n], &mut state, 0.5).unwrap().x;
        }
        for v in x {
            assert!((v - 0.3).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn two_constraints_use_coordinate_ascent() {
        // min −x0 − x1 s.t. x0 ≤ 0.4, x1 ≤ 0.6 (as scaled constraints)
        let mut x = vec![0.2, 0.2];
        let mut state = MmaState::default();
        for _ in 0..50 {
            let g = [x[0] / 0.4 - 1.0, x[1] / 0.6 - 1.0];
            let dg = [vec![2.5, 0.0], vec![0.0, 1.0 / 0.6]];
            let input = MmaInput { f0: -x[0] - x[1], df0: &[-1.0, -1.0], g: &g, dg: &dg };
            x = mma_update(&x, &input, &[0.0; 2], &[1.0; 2], &mut state, 0.2).unwrap().x;
        }
        assert!((x[0] - 0.4).abs() < 1e-3 && (x[1] - 0.6).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn non_finite_input_fails() {
        let mut state = MmaState::default();
        let input = MmaInput { f0: f64::NAN, df0: &[1.0], g: &[], dg: &[] };
        assert!(mma_update(&[0.5], &input, &[0.0], &[1.0], &mut state, 0.2).is_err());
    }
}
