use crate::regularization::{heaviside_project, FilterOperator};

use super::UpdateError;

/// Everything the OC bisection needs to measure the projected volume of a
/// candidate design.
pub struct VolumeMap<'a> {
    pub filter: &'a FilterOperator,
    pub active: &'a [bool],
    pub beta: f64,
    pub eta: f64,
}

impl VolumeMap<'_> {
    pub fn volume(&self, rho: &[f64]) -> f64 {
        let bar = heaviside_project(&self.filter.apply(rho), self.beta, self.eta);
        let (sum, count) = bar
            .iter()
            .zip(self.active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        sum / count as f64
    }
}

const MAX_BISECTIONS: usize = 200;

/// Optimality-criteria update with bisection on the volume multiplier.
///
/// `dc` must be nonpositive and `dv` nonnegative on active elements; inactive
/// elements keep their value.
#[allow(clippy::too_many_arguments)]
pub fn oc_update(
    rho: &[f64],
    dc: &[f64],
    dv: &[f64],
    volfrac: f64,
    move_limit: f64,
    map: &VolumeMap<'_>,
    volume_tolerance: f64,
) -> Result<Vec<f64>, UpdateError> {
    let n = rho.len();
    if dc.len() != n || dv.len() != n {
        return Err(UpdateError::Degenerate("gradient length mismatch".into()));
    }
    if dc.iter().chain(dv).any(|v| !v.is_finite()) {
        return Err(UpdateError::NonFinite("OC received non-finite sensitivities".into()));
    }
    let candidate = |lambda: f64| -> Vec<f64> {
        (0..n)
            .map(|e| {
                if !map.active[e] {
                    return rho[e];
                }
                let b = (-dc[e]).max(0.0) / (lambda * dv[e].max(1e-300));
                let lo = (rho[e] - move_limit).max(0.0);
                let hi = (rho[e] + move_limit).min(1.0);
                (rho[e] * b.sqrt()).clamp(lo, hi)
            })
            .collect()
    };

    if move_limit == 0.0 {
        return Ok(rho.to_vec());
    }

    // volume decreases monotonically in λ; bisect in log space
    let (mut lo, mut hi) = (1e-40f64, 1e40f64);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo * hi).sqrt();
        let x = candidate(mid);
        let v = map.volume(&x);
        let err = (v - volfrac).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, x));
        }
        if err <= volume_tolerance * 1e-2 || hi / lo < 1.0 + 1e-15 {
            break;
        }
        if v > volfrac {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (err, x) = best.expect("at least one bisection step");
    if err > volume_tolerance {
        return Err(UpdateError::BisectionFailed(format!(
            "OC bisection ended with projected volume off the bound by {err:.3e} (tolerance {volume_tolerance:.0e})"
        )));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_map(n: usize, active: &[bool]) -> (FilterOperator, Vec<bool>) {
        (FilterOperator::identity(n), active.to_vec())
    }

    #[test]
    fn zero_move_limit_is_fixed_point() {
        let (f, a) = identity_map(4, &[true; 4]);
        let map = VolumeMap { filter: &f, active: &a, beta: 1.0, eta: 0.5 };
        let rho = vec![0.1, 0.7, 0.3, 0.9];
        let out = oc_update(&rho, &[-1.0, -2.0, -0.5, -1.0], &[0.25; 4], 0.5, 0.0, &map, 1e-4).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn uniform_gradients_keep_uniform_design() {
        let (f, a) = identity_map(10, &[true; 10]);
        // near-identity projection
        let map = VolumeMap { filter: &f, active: &a, beta: 1e-6, eta: 0.5 };
        let rho = vec![0.4; 10];
        let out = oc_update(&rho, &[-3.0; 10], &[0.1; 10], 0.4, 0.2, &map, 1e-4).unwrap();
        for v in out {
            assert!((v - 0.4).abs() <= 1e-4);
        }
    }

    #[test]
    fn unreachable_volume_fails() {
        let (f, a) = identity_map(4, &[true; 4]);
        let map = VolumeMap { filter: &f, active: &a, beta: 1e-6, eta: 0.5 };
        let err = oc_update(&[0.1; 4], &[-1.0; 4], &[0.25; 4], 0.9, 0.05, &map, 1e-4).unwrap_err();
        assert!(matches!(err, UpdateError::BisectionFailed(_)));
    }

    #[test]
    fn non_finite_sensitivity_fails() {
        let (f, a) = identity_map(2, &[true; 2]);
        let map = VolumeMap { filter: &f, active: &a, beta: 1.0, eta: 0.5 };
        let err = oc_update(&[0.5; 2], &[f64::NAN, -1.0], &[0.5; 2], 0.5, 0.2, &map, 1e-4).unwrap_err();
        assert!(matches!(err, UpdateError::NonFinite(_)));
    }
}
