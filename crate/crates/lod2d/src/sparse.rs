//! Sparse symmetric operators, conjugate gradients and condition-number
//! estimation from the CG coefficients.

use nalgebra::DMatrix;

use crate::error::{LodError, Result};

/// Compressed sparse row matrix, symmetric by construction.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// x' A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.values[k] * y[self.col_idx[k]];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// Entry (i, j), zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(off) => self.values[range.start + off],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Dense submatrix over a sorted support set of row/column ids.
    pub fn dense_submatrix(&self, support: &[usize]) -> DMatrix<f64> {
        let pos: std::collections::HashMap<usize, usize> = support
            .iter()
            .enumerate()
            .map(|(local, &global)| (global, local))
            .collect();
        let mut out = DMatrix::zeros(support.len(), support.len());
        for (li, &gi) in support.iter().enumerate() {
            for k in self.row_ptr[gi]..self.row_ptr[gi + 1] {
                if let Some(&lj) = pos.get(&self.col_idx[k]) {
                    out[(li, lj)] = self.values[k];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[(i, self.col_idx[k])] = self.values[k];
            }
        }
        out
    }

    /// Largest |i - j| over the sparsity pattern.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max(self.col_idx[k].abs_diff(i));
            }
        }
        bw
    }
}

/// Symmetric linear operator given by its action.
pub trait SymOp: Sync {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

impl SymOp for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
    }
}

/// Dense symmetric operator wrapper for small subproblems.
pub struct DenseOp<'a>(pub &'a DMatrix<f64>);

impl SymOp for DenseOp<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.nrows();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.0[(i, j)] * x[j];
            }
            y[i] = acc;
        }
    }
}

/// Stopping mode for the conjugate gradient iteration.
#[derive(Debug, Clone, Copy)]
pub enum CgMode {
    /// Run exactly this many steps (early exit only below `EARLY_EXIT_TOL`).
    FixedIterations(usize),
    /// Run until the relative residual drops below the tolerance, capped at
    /// 10 x dimension iterations.
    Tolerance(f64),
}

/// Relative-residual early exit inside fixed-iteration runs.
pub const EARLY_EXIT_TOL: f64 = 1e-14;

/// Outcome of one CG run, including the Ritz-value condition estimate
/// recovered from the alpha/beta recurrence.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub iterations: usize,
    pub rel_residuals: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    /// theta_max / theta_min.
    pub cond: f64,
    /// (sqrt(cond) - 1) / (sqrt(cond) + 1).
    pub contraction: f64,
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl CgReport {
    /// Condition estimate from the leading j x j Lanczos tridiagonal.
    pub fn cond_after(&self, j: usize) -> Option<f64> {
        if j == 0 || j > self.alphas.len() {
            return None;
        }
        let (lo, hi) = ritz_extremes(&self.alphas[..j], &self.betas[..j.saturating_sub(1)]);
        if lo > 0.0 {
            Some(hi / lo)
        } else {
            None
        }
    }
}

fn ritz_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    t[(0, 0)] = 1.0 / alphas[0];
    for j in 1..k {
        t[(j, j)] = 1.0 / alphas[j] + betas[j - 1] / alphas[j - 1];
        let off = betas[j - 1].max(0.0).sqrt() / alphas[j - 1];
        t[(j, j - 1)] = off;
        t[(j - 1, j)] = off;
    }
    let eig = t.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::MAX, f64::min);
    let hi = eig.iter().cloned().fold(f64::MIN, f64::max);
    (lo, hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients with zero initial guess on a symmetric positive
/// definite operator. Records the relative 2-norm residual history and,
/// when `record_ritz` is set, the Lanczos tridiagonal extremes.
pub fn cg(op: &dyn SymOp, b: &[f64], mode: CgMode, record_ritz: bool) -> Result<(Vec<f64>, CgReport)> {
    let n = op.dim();
    if b.len() != n {
        return Err(LodError::DimensionMismatch(format!(
            "cg rhs has length {}, operator dimension {n}",
            b.len()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(LodError::DimensionMismatch("cg rhs is not finite".into()));
    }
    let bnorm = norm2(b);
    let empty_report = |iters| CgReport {
        iterations: iters,
        rel_residuals: Vec::new(),
        theta_min: 1.0,
        theta_max: 1.0,
        cond: 1.0,
        contraction: 0.0,
        alphas: Vec::new(),
        betas: Vec::new(),
    };
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], empty_report(0)));
    }

    let (max_iter, tol) = match mode {
        CgMode::FixedIterations(k) => (k, EARLY_EXIT_TOL),
        CgMode::Tolerance(t) => (10 * n, t),
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut rel_residuals = Vec::new();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(LodError::CgBreakdown(pap));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        alphas.push(alpha);
        betas.push(beta);
        rr = rr_new;
        iterations += 1;
        let rel = rr.sqrt() / bnorm;
        rel_residuals.push(rel);
        if rel < tol {
            break;
        }
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }

    if let CgMode::Tolerance(t) = mode {
        if rel_residuals.last().copied().unwrap_or(1.0) >= t {
            return Err(LodError::CgStalled(iterations));
        }
    }

    let (theta_min, theta_max) = if record_ritz && !alphas.is_empty() {
        // the final beta closes no Lanczos step; drop it
        ritz_extremes(&alphas, &betas[..betas.len() - 1])
    } else {
        (1.0, 1.0)
    };
    let cond = if theta_min > 0.0 {
        (theta_max / theta_min).max(1.0)
    } else {
        1.0
    };
    let s = cond.sqrt();
    let contraction = (s - 1.0) / (s + 1.0);
    Ok((
        x,
        CgReport {
            iterations,
            rel_residuals,
            theta_min,
            theta_max,
            cond,
            contraction,
            alphas,
            betas,
        },
    ))
}

/// Estimates the condition number of an SPD operator and the CG contraction
/// factor q from one seeded run with a random unit right-hand side.
///
/// Returns the first stabilized Ritz estimate (relative change below 1e-3
/// over 10 consecutive iterations) or the value at termination.
pub fn estimate_condition(op: &dyn SymOp, seed: u64) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    let n = op.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nb = norm2(&b);
    for v in &mut b {
        *v /= nb;
    }
    let (_, report) = cg(op, &b, CgMode::Tolerance(1e-14), true)?;

    let conds: Vec<f64> = (1..=report.iterations)
        .filter_map(|j| report.cond_after(j))
        .collect();
    let mut chosen = report.cond;
    'outer: for w in 10..conds.len() {
        for i in w - 10..w {
            if (conds[i + 1] - conds[i]).abs() > 1e-3 * conds[i].abs().max(1e-300) {
                continue 'outer;
            }
        }
        chosen = conds[w];
        break;
    }
    let cond = chosen.max(1.0);
    let s = cond.sqrt();
    Ok((cond, (s - 1.0) / (s + 1.0)))
}

/// Banded Cholesky factorization of an SPD matrix, used for the fine-grid
/// reference solve where CG would be fragile under extreme contrast.
pub struct BandCholesky {
    n: usize,
    kb: usize,
    /// band[i * (kb + 1) + d] = L[i, i - d]
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let kb = a.bandwidth();
        let w = kb + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if j <= i {
                    band[i * w + (i - j)] = a.values[k];
                }
            }
        }
        for j in 0..n {
            let mut diag = band[j * w];
            let k0 = j.saturating_sub(kb);
            for k in k0..j {
                let l = band[j * w + (j - k)];
                diag -= l * l;
            }
            if diag <= 0.0 {
                return Err(LodError::NotPositiveDefinite(format!(
                    "band Cholesky pivot {diag:.3e} at row {j}"
                )));
            }
            let dj = diag.sqrt();
            band[j * w] = dj;
            let i_end = (j + kb + 1).min(n);
            for i in j + 1..i_end {
                let mut v = band[i * w + (i - j)];
                let k0 = i.saturating_sub(kb).max(j.saturating_sub(kb));
                for k in k0..j {
                    v -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                band[i * w + (i - j)] = v / dj;
            }
        }
        Ok(BandCholesky { n, kb, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kb, w) = (self.n, self.kb, self.kb + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let k0 = i.saturating_sub(kb);
            let mut acc = y[i];
            for k in k0..i {
                acc -= self.band[i * w + (i - k)] * y[k];
            }
            y[i] = acc / self.band[i * w];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            let i_end = (i + kb + 1).min(n);
            for k in i + 1..i_end {
                acc -= self.band[k * w + (k - i)] * y[k];
            }
            y[i] = acc / self.band[i * w];
        }
        y
    }
}
