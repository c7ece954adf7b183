use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use super::FemError;

/// Relative residual every accepted solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_CG_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearSolverSettings {
    /// Sparse Cholesky, falling back to Jacobi-preconditioned CG.
    Direct,
    /// Jacobi-preconditioned CG only.
    Iterative { max_iterations: usize },
}

impl Default for LinearSolverSettings {
    fn default() -> Self {
        LinearSolverSettings::Direct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub method: String,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Symmetric matrix stored as its lower triangle in CSC form.
#[derive(Debug, Clone)]
pub struct LowerCsc {
    pub symbolic: SymbolicSparseColMat<u32>,
    pub values: Vec<f64>,
}

impl LowerCsc {
    pub fn n(&self) -> usize {
        self.symbolic.ncols()
    }

    pub fn as_faer(&self) -> SparseColMatRef<'_, u32, f64> {
        SparseColMatRef::new(self.symbolic.as_ref(), &self.values)
    }

    /// `y = A x` using both triangles.
    pub fn multiply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let col_ptr = self.symbolic.col_ptr();
        let row_idx = self.symbolic.row_idx();
        for j in 0..self.n() {
            for p in col_ptr[j] as usize..col_ptr[j + 1] as usize {
                let i = row_idx[p] as usize;
                let a = self.values[p];
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let col_ptr = self.symbolic.col_ptr();
        let row_idx = self.symbolic.row_idx();
        (0..self.n())
            .map(|j| {
                (col_ptr[j] as usize..col_ptr[j + 1] as usize)
                    .find(|&p| row_idx[p] as usize == j)
                    .map_or(0.0, |p| self.values[p])
            })
            .collect()
    }

    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; b.len()];
        self.multiply(x, &mut ax);
        let r = ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let nb = norm(b);
        if nb == 0.0 {
            r
        } else {
            r / nb
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A factored (or CG-ready) system that can be solved repeatedly, so the
/// adjoint solve reuses the forward factorization.
pub struct Factorization {
    matrix: LowerCsc,
    llt: Option<Llt<u32, f64>>,
    settings: LinearSolverSettings,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("n", &self.matrix.n())
            .field("cholesky", &self.llt.is_some())
            .field("settings", &self.settings)
            .finish()
    }
}

impl Factorization {
    pub fn new(matrix: LowerCsc, symbolic: Option<&SymbolicLlt<u32>>, settings: LinearSolverSettings) -> Self {
        let llt = match (settings, symbolic) {
            (LinearSolverSettings::Direct, Some(sym)) => {
                Llt::try_new_with_symbolic(sym.clone(), matrix.as_faer(), Side::Lower).ok()
            }
            _ => None,
        };
        Self { matrix, llt, settings }
    }

    pub fn matrix(&self) -> &LowerCsc {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveDiagnostics), FemError> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(FemError::NonFinite("right-hand side contains non-finite values".into()));
        }
        if norm(b) == 0.0 {
            let diag = SolveDiagnostics { method: "trivial".into(), iterations: 0, relative_residual: 0.0 };
            return Ok((vec![0.0; b.len()], diag));
        }
        let max_cg = match self.settings {
            LinearSolverSettings::Direct => DEFAULT_CG_ITERATIONS,
            LinearSolverSettings::Iterative { max_iterations } => max_iterations,
        };
        if let Some(llt) = &self.llt {
            if let Some(out) = self.solve_direct(llt, b) {
                return Ok(out);
            }
        }
        pcg(&self.matrix, b, SOLVE_TOLERANCE, max_cg)
    }

    fn solve_direct(&self, llt: &Llt<u32, f64>, b: &[f64]) -> Option<(Vec<f64>, SolveDiagnostics)> {
        let n = b.len();
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let sol = llt.solve(&rhs);
        let mut x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
        let mut res = self.matrix.relative_residual(&x, b);
        let mut refinements = 0;
        // iterative refinement for badly scaled systems (high-contrast SIMP moduli)
        while res > SOLVE_TOLERANCE && refinements < 3 {
            let mut ax = vec![0.0; n];
            self.matrix.multiply(&x, &mut ax);
            let r = Mat::<f64>::from_fn(n, 1, |i, _| b[i] - ax[i]);
            let dx = llt.solve(&r);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += dx[(i, 0)];
            }
            res = self.matrix.relative_residual(&x, b);
            refinements += 1;
        }
        (res.is_finite() && res <= SOLVE_TOLERANCE && x.iter().all(|v| v.is_finite())).then(|| {
            (x, SolveDiagnostics { method: "cholesky".into(), iterations: refinements, relative_residual: res })
        })
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &LowerCsc, b: &[f64], tol: f64, max_iterations: usize) -> Result<(Vec<f64>, SolveDiagnostics), FemError> {
    let n = b.len();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let nb = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = norm(&r) / nb;
    for it in 1..=max_iterations {
        a.multiply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(FemError::SingularSystem(format!(
                "conjugate gradients met a non-positive curvature {pap:e} at iteration {it}; matrix is singular or indefinite"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / nb;
        if rel <= tol {
            // confirm against the true residual, not the recurrence
            let true_rel = a.relative_residual(&x, b);
            if true_rel <= tol {
                return Ok((x, SolveDiagnostics { method: "pcg".into(), iterations: it, relative_residual: true_rel }));
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NotConverged { iterations: max_iterations, relative_residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::sparse::{SparseColMat, Triplet};

    fn tridiagonal(n: usize) -> LowerCsc {
        let mut t = Vec::new();
        for i in 0..n {
            t.push(Triplet::new(i as u32, i as u32, 4.0));
            if i + 1 < n {
                t.push(Triplet::new(i as u32 + 1, i as u32, -1.0));
            }
        }
        let m = SparseColMat::<u32, f64>::try_new_from_triplets(n, n, &t).unwrap();
        LowerCsc { symbolic: m.symbolic().to_owned().unwrap(), values: m.val().to_vec() }
    }

    #[test]
    fn direct_and_cg_agree() {
        let a = tridiagonal(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let sym = SymbolicLlt::try_new(a.symbolic.as_ref(), Side::Lower).unwrap();
        let direct = Factorization::new(a.clone(), Some(&sym), LinearSolverSettings::Direct);
        let (x1, d1) = direct.solve(&b).unwrap();
        assert_eq!(d1.method, "cholesky");
        let (x2, d2) = pcg(&a, &b, 1e-12, 100).unwrap();
        assert!(d2.relative_residual <= 1e-12);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = tridiagonal(200);
        let b = vec![1.0; 200];
        let err = pcg(&a, &b, 1e-14, 2).unwrap_err();
        assert!(matches!(err, FemError::NotConverged { iterations: 2, .. }));
    }

    #[test]
    fn zero_rhs_is_trivial() {
        let a = tridiagonal(5);
        let f = Factorization::new(a, None, LinearSolverSettings::Iterative { max_iterations: 10 });
        let (x, _) = f.solve(&[0.0; 5]).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
