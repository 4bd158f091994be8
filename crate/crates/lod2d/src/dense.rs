//! Dense symmetric eigensolves, Gram-Schmidt in an energy inner product,
//! and small SPD utilities built on nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{LodError, Result};

/// Solves the symmetric generalized eigenproblem A x = lambda B x with B
/// symmetric positive definite. Returns eigenvalues ascending with the
/// corresponding B-orthonormal eigenvectors as columns.
pub fn sym_generalized_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(LodError::DimensionMismatch(
            "generalized eigenproblem matrices must be square of equal size".into(),
        ));
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| LodError::NotPositiveDefinite("B in generalized eigenproblem".into()))?;
    // C = L^{-1} A L^{-T}, symmetric
    let l = chol.l();
    let mut c = a.clone();
    // solve L Y = A (column-wise), then C = Y L^{-T} via solving L C' = Y'
    l.solve_lower_triangular_mut(&mut c);
    c.transpose_mut();
    l.solve_lower_triangular_mut(&mut c);
    // symmetrize against roundoff
    let cs = (&c + c.transpose()) * 0.5;
    let eig = cs.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    // map back: x = L^{-T} y
    let lt = l.transpose();
    lt.solve_upper_triangular_mut(&mut vectors);
    Ok((values, vectors))
}

/// Solves a dense SPD system.
pub fn dense_spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| LodError::NotPositiveDefinite("dense SPD solve".into()))
}

/// Applies a symmetric operator given as a closure computing A v.
pub trait ApplyA {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl<F: Fn(&DVector<f64>) -> DVector<f64>> ApplyA for F {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self(v)
    }
}

/// Modified Gram-Schmidt in the inner product induced by `apply_a`,
/// orthonormalizing the columns of `v` in place. One operator application
/// per pivot; a second re-orthogonalization pass runs when the pivot norm
/// drops below half its pre-projection value.
///
/// Fails when a pivot norm falls below 1e-12 times its initial norm.
pub fn mgs_orthonormalize<A: ApplyA>(v: &mut DMatrix<f64>, apply_a: &A, entity: &str) -> Result<()> {
    let k = v.ncols();
    for j in 0..k {
        let initial = {
            let col = v.column(j).clone_owned();
            let av = apply_a.apply(&col);
            col.dot(&av).max(0.0).sqrt()
        };
        for pass in 0..2 {
            let col = v.column(j).clone_owned();
            let av = apply_a.apply(&col);
            let before = col.dot(&av).max(0.0).sqrt();
            for i in 0..j {
                let vi = v.column(i).clone_owned();
                let r = vi.dot(&av);
                let mut cj = v.column_mut(j);
                cj.axpy(-r, &vi, 1.0);
            }
            let col = v.column(j).clone_owned();
            let avj = apply_a.apply(&col);
            let norm = col.dot(&avj).max(0.0).sqrt();
            if norm <= 1e-12 * initial.max(f64::MIN_POSITIVE) {
                return Err(LodError::GramSchmidtBreakdown {
                    column: j,
                    pivot: norm,
                    entity: entity.to_string(),
                });
            }
            let needs_second = norm < 0.5 * before && j > 0 && pass == 0;
            if !needs_second {
                let mut cj = v.column_mut(j);
                cj.scale_mut(1.0 / norm);
                break;
            }
        }
    }
    Ok(())
}

/// Subtracts from each column of `v` its A-inner-product components along
/// the A-orthonormal columns of `q`.
pub fn project_out<A: ApplyA>(v: &mut DMatrix<f64>, q: &DMatrix<f64>, apply_a: &A) {
    for j in 0..v.ncols() {
        let col = v.column(j).clone_owned();
        let av = apply_a.apply(&col);
        for i in 0..q.ncols() {
            let qi = q.column(i).clone_owned();
            let r = qi.dot(&av);
            let mut cj = v.column_mut(j);
            cj.axpy(-r, &qi, 1.0);
        }
    }
}

/// Spectral norm by power iteration on M' M, relative tolerance 1e-10.
pub fn two_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let n = m.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    // deterministic perturbation breaks symmetry traps
    for i in 0..n {
        v[i] += 1e-3 * ((i as f64) + 1.0).sin();
    }
    v /= v.norm();
    let mut lambda = 0.0f64;
    for _ in 0..10_000 {
        let w = m.transpose() * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let new_lambda = v.dot(&w);
        v = w / norm;
        if (new_lambda - lambda).abs() <= 1e-10 * new_lambda.abs().max(f64::MIN_POSITIVE) {
            return new_lambda.max(0.0).sqrt();
        }
        lambda = new_lambda;
    }
    lambda.max(0.0).sqrt()
}

/// Smallest singular value by inverse power iteration on M' M through its
/// Cholesky factorization. Returns 0 when M' M is numerically singular.
pub fn min_singular(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let n = m.ncols();
    let mtm = m.transpose() * m;
    let chol = match mtm.clone().cholesky() {
        Some(c) => c,
        None => return 0.0,
    };
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) + 1.0).cos());
    v /= v.norm();
    let mut mu = 0.0f64;
    for _ in 0..10_000 {
        let w = chol.solve(&v);
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return 0.0;
        }
        let new_mu = v.dot(&w);
        v = w / norm;
        if (new_mu - mu).abs() <= 1e-10 * new_mu.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        mu = new_mu;
    }
    if mu <= 0.0 {
        return 0.0;
    }
    (1.0 / mu).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn generalized_eig_diagonal_case() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0, 18.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 2.0]));
        let (vals, vecs) = sym_generalized_eig(&a, &b).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 4.0).abs() < 1e-12);
        assert!((vals[2] - 9.0).abs() < 1e-12);
        // B-orthonormality
        let g = vecs.transpose() * &b * &vecs;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generalized_eig_residuals_random() {
        let a = random_spd(12, 5);
        let b = random_spd(12, 6);
        let (vals, vecs) = sym_generalized_eig(&a, &b).unwrap();
        for k in 0..12 {
            let x = vecs.column(k).clone_owned();
            let r = &a * &x - &b * &x * vals[k];
            assert!(r.norm() < 1e-8 * a.norm(), "residual {} at {k}", r.norm());
        }
        for k in 1..12 {
            assert!(vals[k] >= vals[k - 1]);
        }
    }

    #[test]
    fn mgs_produces_a_orthonormal_columns() {
        let a = random_spd(10, 7);
        let apply = |v: &DVector<f64>| &a * v;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut v = DMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        mgs_orthonormalize(&mut v, &apply, "test").unwrap();
        let g = v.transpose() * &a * &v;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-10, "g[{i},{j}] = {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn mgs_detects_dependence() {
        let a = DMatrix::identity(5, 5);
        let apply = |v: &DVector<f64>| &a * v;
        let mut v = DMatrix::zeros(5, 2);
        v[(0, 0)] = 1.0;
        v[(0, 1)] = 2.0; // same direction
        let err = mgs_orthonormalize(&mut v, &apply, "test").unwrap_err();
        assert!(matches!(err, LodError::GramSchmidtBreakdown { column: 1, .. }));
    }

    #[test]
    fn project_out_removes_components() {
        let a = random_spd(8, 11);
        let apply = |v: &DVector<f64>| &a * v;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut q = DMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        mgs_orthonormalize(&mut q, &apply, "q").unwrap();
        let mut v = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
        project_out(&mut v, &q, &apply);
        let g = q.transpose() * &a * &v;
        assert!(g.amax() < 1e-10, "residual coupling {}", g.amax());
    }

    #[test]
    fn two_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(9, 6, |_, _| rng.gen_range(-1.0..1.0));
        let svd = m.clone().svd(false, false);
        let want = svd.singular_values.max();
        assert!((two_norm(&m) - want).abs() < 1e-8 * want);
    }

    #[test]
    fn min_singular_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(8, 8) * 3.0;
        let svd = m.clone().svd(false, false);
        let want = svd.singular_values.min();
        assert!((min_singular(&m) - want).abs() < 1e-7 * want.max(1.0));
    }

    #[test]
    fn min_singular_zero_for_singular() {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 0)] = 1.0;
        assert_eq!(min_singular(&m), 0.0);
    }

    #[test]
    fn dense_spd_solve_roundtrip() {
        let a = random_spd(7, 13);
        let x = DVector::from_fn(7, |i, _| (i as f64) - 3.0);
        let b = &a * &x;
        let got = dense_spd_solve(&a, &b).unwrap();
        assert!((got - x).norm() < 1e-9);
    }
}
