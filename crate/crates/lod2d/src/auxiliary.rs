//! Auxiliary spectral space: per-element generalized eigenproblems, the
//! eigenvalue threshold selection, and the elementwise projection onto the
//! selected modes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_local_forms, LocalForms};
use crate::coefficient::CoefficientField;
use crate::dense::sym_generalized_eig;
use crate::error::Result;
use crate::mesh::{BoundaryClass, MeshHierarchy, NodeClassification};

/// Scaling constant of the a priori error certificate,
/// (2 * max_i 1/mu_hat_i)^{1/2} with the worst-case bound pi^2/4.
pub fn c_star() -> f64 {
    2.0f64.powf(1.5) / std::f64::consts::PI
}

/// Analytic lower bound on the first nonzero eigenvalue of the local
/// problem with unit coefficient, by element boundary class.
pub fn mu_lower_bound(class: BoundaryClass) -> f64 {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    match class {
        BoundaryClass::Interior => pi2,
        BoundaryClass::OneEdgeOnBoundary => pi2 / 4.0,
        BoundaryClass::TwoEdgesOnBoundary => pi2 / 2.0,
    }
}

/// Selected spectral modes of one coarse element.
#[derive(Debug, Clone)]
pub struct LocalEigenBasis {
    pub element: usize,
    /// Global node ids indexing the rows of `psi`, membership order.
    pub nodes: Vec<usize>,
    /// Selected eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// First eigenvalue beyond the selection, +inf when all are selected.
    pub next_eigenvalue: f64,
    /// Number of selected modes L_i.
    pub l: usize,
    /// s_i-orthonormal eigenvectors, dim x L_i.
    pub psi: DMatrix<f64>,
    /// S_i * psi, so that s_i(v, psi_j) is a plain dot product.
    pub s_psi: DMatrix<f64>,
    pub mu_hat: f64,
}

impl LocalEigenBasis {
    /// Coefficients s_i(v, psi_j) of the restriction of a global vector.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let vr = DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&g| v[g]));
        (0..self.l).map(|j| self.s_psi.column(j).dot(&vr)).collect()
    }
}

/// Builds the spectral basis of one element from its local forms.
///
/// Eigenvalues within 1e-10 * max|A_i| of zero are clamped to zero, and the
/// selection takes every eigenvalue at or below mu_hat / 2.
pub fn build_local_basis(forms: &LocalForms, element: usize, mu_hat: f64) -> Result<LocalEigenBasis> {
    let (mut values, vectors) = sym_generalized_eig(&forms.a, &forms.s)?;
    let zero_tol = 1e-10 * forms.a.amax();
    for v in &mut values {
        if v.abs() <= zero_tol {
            *v = 0.0;
        }
    }
    let threshold = mu_hat / 2.0;
    let l = values.iter().take_while(|&&v| v <= threshold).count();
    let next_eigenvalue = values.get(l).copied().unwrap_or(f64::INFINITY);
    let psi = vectors.columns(0, l).clone_owned();
    let s_psi = &forms.s * &psi;
    Ok(LocalEigenBasis {
        element,
        nodes: forms.nodes.clone(),
        eigenvalues: values[..l].to_vec(),
        next_eigenvalue,
        l,
        psi,
        s_psi,
        mu_hat,
    })
}

/// The assembled auxiliary space: one spectral basis per coarse element.
#[derive(Debug, Clone)]
pub struct AuxSpace {
    pub locals: Vec<LocalEigenBasis>,
    /// Total number of selected modes L.
    pub l_total: usize,
}

impl AuxSpace {
    pub fn c_star(&self) -> f64 {
        c_star()
    }
}

/// Builds the auxiliary space, one independent eigensolve per element.
pub fn build_aux_space(
    hier: &MeshHierarchy,
    kappa: &CoefficientField,
    cls: &NodeClassification,
) -> Result<AuxSpace> {
    let locals: Vec<LocalEigenBasis> = (0..hier.m)
        .into_par_iter()
        .map(|e| {
            let forms = assemble_local_forms(hier, kappa, e);
            build_local_basis(&forms, e, mu_lower_bound(cls.element_boundary_class[e]))
        })
        .collect::<Result<Vec<_>>>()?;
    let l_total = locals.iter().map(|lb| lb.l).sum();
    Ok(AuxSpace { locals, l_total })
}

/// Per-element projection coefficients s_i(v, psi_j) of a global vector.
pub fn pi_aux_coeffs(aux: &AuxSpace, v: &[f64]) -> Vec<Vec<f64>> {
    aux.locals.iter().map(|lb| lb.project(v)).collect()
}

/// Elementwise reconstruction of the projection as a broken function: the
/// nodal values of each element's projected restriction.
pub fn pi_aux_broken(aux: &AuxSpace, v: &[f64]) -> Vec<DVector<f64>> {
    aux.locals
        .iter()
        .map(|lb| {
            let c = lb.project(v);
            let mut out = DVector::zeros(lb.nodes.len());
            for (j, &cj) in c.iter().enumerate() {
                out.axpy(cj, &lb.psi.column(j).clone_owned(), 1.0);
            }
            out
        })
        .collect()
}
