//! Iteration-count selection, corrector solves and the localized
//! multiscale space.
//!
//! Localization is purely iterative: k conjugate gradient steps on the
//! kernel-restricted operator spread each correction about k coarse layers
//! from its dual node, so no patch truncation is ever applied.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dense::{mgs_orthonormalize, ApplyA};
use crate::dual::DualNodeSet;
use crate::error::{LodError, Result};
use crate::kernel::{BlockKernelBasis, KtAK};
use crate::mesh::MeshHierarchy;
use crate::sparse::{cg, CgMode, CgReport, CsrMatrix};

/// Smallest k >= 1 with 2 q^k sqrt(L) sqrt(M) sqrt(beta) <= H^2.
pub fn choose_k(q: f64, l: f64, m: f64, beta: f64, h_coarse: f64) -> Result<usize> {
    if !(q >= 0.0 && q < 1.0) {
        return Err(LodError::InvalidContraction(q));
    }
    if !(beta > 0.0 && h_coarse > 0.0) || l < 0.0 || m < 0.0 {
        return Err(LodError::Config(format!(
            "choose_k needs positive beta and H, nonnegative L and M; got L={l} M={m} beta={beta} H={h_coarse}"
        )));
    }
    let target = h_coarse * h_coarse;
    let factor = 2.0 * l.sqrt() * m.sqrt() * beta.sqrt();
    let mut k = 1usize;
    let mut qk = q;
    while factor * qk > target {
        k += 1;
        qk *= q;
        if k > 1_000_000 {
            return Err(LodError::InvalidContraction(q));
        }
    }
    Ok(k)
}

/// Inputs of the localized corrector runs.
#[derive(Debug, Clone)]
pub struct CorrectorPlan {
    /// Condition estimate of the kernel-restricted operator.
    pub cond: f64,
    /// CG contraction factor derived from it.
    pub q: f64,
    /// Total selected modes L.
    pub l: usize,
    /// max_i of the dual Gram norms.
    pub m: f64,
    /// Coefficient contrast.
    pub beta: f64,
    /// Coarse mesh size.
    pub h_coarse: f64,
    /// Fixed CG iteration count.
    pub k: usize,
}

impl CorrectorPlan {
    pub fn new(cond: f64, q: f64, l: usize, m: f64, beta: f64, h_coarse: f64) -> Result<Self> {
        let k = choose_k(q, l as f64, m, beta, h_coarse)?;
        Ok(CorrectorPlan {
            cond,
            q,
            l,
            m,
            beta,
            h_coarse,
            k,
        })
    }
}

/// Runs exactly `k` CG iterations of the corrector equation for one fine
/// vector and maps the coefficients back to the fine space.
pub fn corrector_solve(
    op: &KtAK,
    basis: &BlockKernelBasis,
    a: &CsrMatrix,
    v: &[f64],
    k: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let rhs = basis.apply_kt(&a.matvec(v));
    let (x, report) = cg(op, &rhs, CgMode::FixedIterations(k), false)?;
    Ok((basis.apply_k(&x), report))
}

/// The fully converged corrector, for reference comparisons.
pub fn ideal_corrector(
    op: &KtAK,
    basis: &BlockKernelBasis,
    a: &CsrMatrix,
    v: &[f64],
) -> Result<Vec<f64>> {
    let rhs = basis.apply_kt(&a.matvec(v));
    let (x, _) = cg(op, &rhs, CgMode::Tolerance(1e-14), false)?;
    Ok(basis.apply_k(&x))
}

/// One localized basis vector stored sparse.
#[derive(Debug, Clone)]
pub struct SparseVec {
    /// (node, value), ascending by node.
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn from_dense(v: &[f64], drop_tol: f64) -> (Self, usize) {
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let cut = drop_tol * max;
        let mut entries = Vec::new();
        let mut dropped = 0;
        for (i, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            if x.abs() <= cut {
                dropped += 1;
            } else {
                entries.push((i, x));
            }
        }
        (SparseVec { entries }, dropped)
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Drop threshold, relative to the max-norm of each basis vector.
pub const BASIS_DROP_TOL: f64 = 1e-14;

/// The localized multiscale space: one basis vector per dual node,
/// a-orthonormalized within each element at the end.
#[derive(Debug)]
pub struct MultiscaleSpace {
    /// Basis vectors in (element, dual index) order.
    pub vectors: Vec<SparseVec>,
    /// (element, dual index) of each vector.
    pub owners: Vec<(usize, usize)>,
    pub plan: CorrectorPlan,
    /// CG iterations actually run per vector.
    pub iterations: Vec<usize>,
    /// Entries removed by the sparsity drop, total.
    pub dropped_entries: usize,
    pub n: usize,
}

struct GlobalA<'a>(&'a CsrMatrix);

impl ApplyA for GlobalA<'_> {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.0.matvec(v.as_slice()))
    }
}

/// Builds the localized multiscale basis: a k-step corrector solve per
/// dual hat, then a modified Gram-Schmidt pass among each element's
/// vectors in the global energy inner product.
pub fn build_multiscale_space(
    hier: &MeshHierarchy,
    a: &CsrMatrix,
    basis: &BlockKernelBasis,
    dual: &DualNodeSet,
    plan: CorrectorPlan,
) -> Result<MultiscaleSpace> {
    let op = KtAK { basis, a };
    let jobs: Vec<(usize, usize, usize, f64)> = dual
        .per_element
        .iter()
        .flat_map(|ed| {
            ed.nodes
                .iter()
                .enumerate()
                .map(move |(j, &p)| (ed.element, j, p, ed.hat_scale[j]))
        })
        .collect();

    let solved: Vec<(usize, usize, Vec<f64>, usize)> = jobs
        .par_iter()
        .map(|&(e, j, p, scale)| {
            let mut hat = vec![0.0; hier.n];
            hat[p] = scale;
            let (corr, report) = corrector_solve(&op, basis, a, &hat, plan.k)?;
            let b: Vec<f64> = hat
                .iter()
                .zip(&corr)
                .map(|(h, c)| h - c)
                .collect();
            Ok((e, j, b, report.iterations))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut vectors = Vec::with_capacity(solved.len());
    let mut owners = Vec::with_capacity(solved.len());
    let mut iterations = Vec::with_capacity(solved.len());
    let mut dropped_entries = 0;
    let ga = GlobalA(a);
    let mut idx = 0;
    for ed in &dual.per_element {
        let li = ed.nodes.len();
        if li == 0 {
            continue;
        }
        let mut cols = DMatrix::zeros(hier.n, li);
        for j in 0..li {
            let (e, jj, ref b, iters) = solved[idx + j];
            debug_assert_eq!((e, jj), (ed.element, j));
            for (row, &v) in b.iter().enumerate() {
                cols[(row, j)] = v;
            }
            iterations.push(iters);
        }
        mgs_orthonormalize(&mut cols, &ga, &format!("multiscale element {}", ed.element))?;
        for j in 0..li {
            let col: Vec<f64> = cols.column(j).iter().cloned().collect();
            let (sv, dropped) = SparseVec::from_dense(&col, BASIS_DROP_TOL);
            dropped_entries += dropped;
            vectors.push(sv);
            owners.push((ed.element, j));
        }
        idx += li;
    }

    Ok(MultiscaleSpace {
        vectors,
        owners,
        plan,
        iterations,
        dropped_entries,
        n: hier.n,
    })
}
