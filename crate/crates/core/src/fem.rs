//! Plane-stress finite elements on a structured grid of Q4 elements.

mod boundary;
mod element;
mod linear;
mod mesh;

use faer::sparse::linalg::solvers::SymbolicLlt;
use faer::sparse::SymbolicSparseColMat;
use faer::Side;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{LoadRegion, SimpParams, SupportRegion};

pub use boundary::{nearest_node, resolve_boundary, BoundaryConditions};
pub use element::{
    bilinear_form, centroid_strain_matrix, centroid_stress_matrix, constitutive, element_stiffness,
    quadratic_form, von_mises, ElementMatrix,
};
pub use linear::{
    pcg, Factorization, LinearSolverSettings, LowerCsc, SolveDiagnostics, DEFAULT_CG_ITERATIONS, SOLVE_TOLERANCE,
};
pub use mesh::{build_mesh, StructuredMesh};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FemError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("linear solver did not converge: relative residual {relative_residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, relative_residual: f64 },
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("field length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Displacement state and derived per-element quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemSolution {
    pub displacement: Vec<f64>,
    pub compliance: f64,
    /// `uₑᵀ k₀ uₑ` with the unit-modulus element matrix.
    pub element_energy: Vec<f64>,
    /// Centroid `(σx, σy, τxy)` on solid material `E0`.
    pub element_stress: Vec<[f64; 3]>,
    pub diagnostics: SolveDiagnostics,
}

/// Assembled stiffness over free dofs with its factorization, kept so that
/// adjoint solves reuse the forward factor.
#[derive(Debug)]
pub struct GlobalSystem {
    factor: Factorization,
    free: Vec<usize>,
    n_dofs: usize,
}

impl GlobalSystem {
    pub fn stiffness(&self) -> &LowerCsc {
        self.factor.matrix()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| full[d]).collect()
    }

    fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_dofs];
        for (&d, &v) in self.free.iter().zip(reduced) {
            full[d] = v;
        }
        full
    }

    /// Solves `K x = rhs` over free dofs; fixed entries of `rhs` are ignored
    /// and the returned full-length vector is zero there.
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveDiagnostics), FemError> {
        let b = self.restrict(rhs);
        let (x, diag) = self.factor.solve(&b)?;
        Ok((self.extend(&x), diag))
    }

    /// `‖K x − rhs‖ / ‖rhs‖` over free dofs.
    pub fn relative_residual(&self, x: &[f64], rhs: &[f64]) -> f64 {
        self.factor.matrix().relative_residual(&self.restrict(x), &self.restrict(rhs))
    }
}

const UNUSED: u32 = u32::MAX;

/// Mesh, boundary conditions and the cached sparsity pattern and symbolic
/// Cholesky factor for one `(mesh, supports, loads)` combination.
pub struct FemModel {
    mesh: StructuredMesh,
    bc: BoundaryConditions,
    ke: ElementMatrix,
    stress_matrix: [[f64; 8]; 3],
    free: Vec<usize>,
    pattern: SymbolicSparseColMat<u32>,
    scatter: Vec<[u32; 64]>,
    symbolic: Option<SymbolicLlt<u32>>,
    settings: LinearSolverSettings,
    nu: f64,
    e0: f64,
}

impl std::fmt::Debug for FemModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FemModel")
            .field("nx", &self.mesh.nx)
            .field("ny", &self.mesh.ny)
            .field("free_dofs", &self.free.len())
            .field("settings", &self.settings)
            .finish()
    }
}

impl FemModel {
    pub fn new(
        mesh: StructuredMesh,
        supports: &[SupportRegion],
        loads: &[LoadRegion],
        simp: &SimpParams,
        settings: LinearSolverSettings,
    ) -> Result<Self, FemError> {
        let bc = resolve_boundary(&mesh, supports, loads)?;
        Self::from_boundary(mesh, bc, simp, settings)
    }

    pub fn from_boundary(
        mesh: StructuredMesh,
        bc: BoundaryConditions,
        simp: &SimpParams,
        settings: LinearSolverSettings,
    ) -> Result<Self, FemError> {
        let ndof = mesh.n_dofs();
        let mut map = vec![UNUSED; ndof];
        let mut free = Vec::new();
        for d in 0..ndof {
            if !bc.fixed[d] {
                map[d] = free.len() as u32;
                free.push(d);
            }
        }
        let nf = free.len();

        let mut columns: Vec<Vec<u32>> = vec![Vec::new(); nf];
        for e in 0..mesh.n_elements() {
            let dofs = mesh.element_dofs(e);
            for &a in &dofs {
                for &b in &dofs {
                    let (r, c) = (map[a], map[b]);
                    if r != UNUSED && c != UNUSED && r >= c {
                        columns[c as usize].push(r);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(nf + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0u32);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len() as u32);
        }

        let mut scatter = Vec::with_capacity(mesh.n_elements());
        for e in 0..mesh.n_elements() {
            let dofs = mesh.element_dofs(e);
            let mut pos = [UNUSED; 64];
            for (i, &a) in dofs.iter().enumerate() {
                for (j, &b) in dofs.iter().enumerate() {
                    let (r, c) = (map[a], map[b]);
                    if r != UNUSED && c != UNUSED && r >= c {
                        let start = col_ptr[c as usize] as usize;
                        let end = col_ptr[c as usize + 1] as usize;
                        let k = row_idx[start..end].binary_search(&r).expect("entry in pattern");
                        pos[8 * i + j] = (start + k) as u32;
                    }
                }
            }
            scatter.push(pos);
        }

        let pattern = SymbolicSparseColMat::new_checked(nf, nf, col_ptr, None, row_idx);
        let symbolic = match settings {
            LinearSolverSettings::Direct => SymbolicLlt::try_new(pattern.as_ref(), Side::Lower).ok(),
            LinearSolverSettings::Iterative { .. } => None,
        };
        Ok(Self {
            ke: element_stiffness(simp.nu, mesh.dx, mesh.dy),
            stress_matrix: centroid_stress_matrix(simp.nu, simp.e0, mesh.dx, mesh.dy),
            mesh,
            bc,
            free,
            pattern,
            scatter,
            symbolic,
            settings,
            nu: simp.nu,
            e0: simp.e0,
        })
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn boundary(&self) -> &BoundaryConditions {
        &self.bc
    }

    pub fn force(&self) -> &[f64] {
        &self.bc.force
    }

    pub fn element_matrix(&self) -> &ElementMatrix {
        &self.ke
    }

    pub fn settings(&self) -> LinearSolverSettings {
        self.settings
    }

    pub fn element_displacement(&self, u: &[f64], e: usize) -> [f64; 8] {
        self.mesh.element_dofs(e).map(|d| u[d])
    }

    /// Element modulus; void elements always carry `Emin`.
    pub fn element_modulus(&self, e: usize, rho_bar: f64, simp: &SimpParams) -> f64 {
        if self.mesh.is_active(e) {
            simp.modulus(rho_bar)
        } else {
            simp.emin
        }
    }

    /// Lower-triangle stiffness values, accumulating elements in `order`.
    pub fn assemble_in_order(&self, rho_bar: &[f64], simp: &SimpParams, order: &[usize]) -> Vec<f64> {
        let mut values = vec![0.0; self.pattern.row_idx().len()];
        for &e in order {
            let modulus = self.element_modulus(e, rho_bar[e], simp);
            let pos = &self.scatter[e];
            for i in 0..8 {
                for j in 0..8 {
                    let p = pos[8 * i + j];
                    if p != UNUSED {
                        values[p as usize] += modulus * self.ke[i][j];
                    }
                }
            }
        }
        values
    }

    pub fn assemble(&self, rho_bar: &[f64], simp: &SimpParams) -> Result<LowerCsc, FemError> {
        let n = self.mesh.n_elements();
        if rho_bar.len() != n {
            return Err(FemError::LengthMismatch { expected: n, got: rho_bar.len() });
        }
        if let Some(e) = rho_bar.iter().position(|v| !v.is_finite()) {
            return Err(FemError::NonFinite(format!("projected density of element {e} is not finite")));
        }
        let order: Vec<usize> = (0..n).collect();
        Ok(LowerCsc { symbolic: self.pattern.clone(), values: self.assemble_in_order(rho_bar, simp, &order) })
    }

    /// Assembles `K(ρ̄)`, solves `K u = F` and evaluates compliance, element
    /// energies and centroid stresses.
    pub fn solve(&self, rho_bar: &[f64], simp: &SimpParams) -> Result<(FemSolution, GlobalSystem), FemError> {
        let k = self.assemble(rho_bar, simp)?;
        let system = GlobalSystem {
            factor: Factorization::new(k, self.symbolic.as_ref(), self.settings),
            free: self.free.clone(),
            n_dofs: self.mesh.n_dofs(),
        };
        let (u, diagnostics) = system.solve(&self.bc.force)?;
        let compliance: f64 = self.bc.force.iter().zip(&u).map(|(f, u)| f * u).sum();
        if !compliance.is_finite() {
            return Err(FemError::NonFinite("compliance is not finite".into()));
        }
        let n = self.mesh.n_elements();
        let mut element_energy = Vec::with_capacity(n);
        let mut element_stress = Vec::with_capacity(n);
        for e in 0..n {
            let ue = self.element_displacement(&u, e);
            element_energy.push(quadratic_form(&self.ke, &ue));
            element_stress.push(self.element_stress(&ue));
        }
        Ok((FemSolution { displacement: u, compliance, element_energy, element_stress, diagnostics }, system))
    }

    fn element_stress(&self, ue: &[f64; 8]) -> [f64; 3] {
        let s = &self.stress_matrix;
        [0, 1, 2].map(|i| (0..8).map(|j| s[i][j] * ue[j]).sum())
    }

    /// `∂σ/∂uₑ` rows at modulus `E0` (same for every element on the grid).
    pub fn stress_matrix(&self) -> &[[f64; 8]; 3] {
        &self.stress_matrix
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.nu
    }

    pub fn solid_modulus(&self) -> f64 {
        self.e0
    }
}

/// One-shot convenience wrapper around [`FemModel`].
pub fn assemble_and_solve(
    mesh: &StructuredMesh,
    densities: &[f64],
    simp: &SimpParams,
    supports: &[SupportRegion],
    loads: &[LoadRegion],
) -> Result<FemSolution, FemError> {
    let model = FemModel::new(mesh.clone(), supports, loads, simp, LinearSolverSettings::Direct)?;
    model.solve(densities, simp).map(|(s, _)| s)
}

pub fn element_von_mises(solution: &FemSolution) -> Vec<f64> {
    solution.element_stress.iter().map(|&s| von_mises(s)).collect()
}
