//! Small dense and Krylov helpers shared by the modal engine and the HUM solvers.

use faer::prelude::*;
use faer::{Mat, Side};

use crate::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Smallest Ritz value of the Lanczos tridiagonal built from the CG coefficients.
    pub lambda_min_estimate: f64,
    /// Value of `½ xᵀAx − bᵀx` after each iteration (the Gramian-norm error up to a constant).
    pub energy_history: Vec<f64>,
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
///
/// `apply(x, out)` must write `A x` into `out`. Iteration stops when
/// `‖b − A x‖ ≤ tol·‖b‖`.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let b_norm = norm2(rhs);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            lambda_min_estimate: f64::NAN,
            energy_history: Vec::new(),
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs_old = dot(&r, &r);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut energy_history = Vec::new();

    for it in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "pᵀAp = {pap:.3e} at CG iteration {it}"
            )));
        }
        let alpha = rs_old / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        alphas.push(alpha);
        // ½xᵀAx − bᵀx = −½xᵀ(b + r)
        let e: f64 = -0.5 * x.iter().zip(rhs.iter().zip(&r)).map(|(xi, (bi, ri))| xi * (bi + ri)).sum::<f64>();
        energy_history.push(e);
        let rel = rs_new.sqrt() / b_norm;
        if rel <= tol {
            return Ok(CgReport {
                solution: x,
                iterations: it + 1,
                relative_residual: rel,
                lambda_min_estimate: lanczos_min(&alphas, &betas),
                energy_history,
            });
        }
        let beta = rs_new / rs_old;
        betas.push(beta);
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs_old = rs_new;
    }
    Err(Error::NonConvergence {
        solver: "conjugate gradient",
        iterations: max_iter,
        residual: rs_old.sqrt() / b_norm,
    })
}

fn lanczos_min(alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    if k == 0 {
        return f64::NAN;
    }
    let mut t = Mat::<f64>::zeros(k, k);
    for i in 0..k {
        let mut d = 1.0 / alphas[i];
        if i > 0 {
            d += betas[i - 1] / alphas[i - 1];
        }
        t[(i, i)] = d;
        if i + 1 < k {
            let off = betas[i].sqrt() / alphas[i];
            t[(i, i + 1)] = off;
            t[(i + 1, i)] = off;
        }
    }
    t.selfadjoint_eigenvalues(Side::Lower)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
/// Column `j` of the returned matrix is the eigenvector of eigenvalue `j`.
pub fn sym_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Eigensolver("matrix is not square".into()));
    }
    let evd = a.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| s.read(i)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| u.read(r, order[c]));
    Ok((sorted, vecs))
}

pub fn sym_eigenvalues(a: &Mat<f64>) -> Vec<f64> {
    let mut v = a.selfadjoint_eigenvalues(Side::Lower);
    v.sort_by(f64::total_cmp);
    v
}

/// Dense symmetric positive definite solve by Cholesky.
pub fn cholesky_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let chol = a
        .cholesky(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = chol.solve(&rhs);
    Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
}

/// Dense general solve by LU with partial pivoting.
pub fn lu_solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let lu = a.partial_piv_lu();
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64], out: &mut [f64]) {
    let (n, m) = (a.nrows(), a.ncols());
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(out.len(), n);
    out.iter_mut().for_each(|o| *o = 0.0);
    // column-major storage: accumulate column by column
    for j in 0..m {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col.read(i) * xj;
        }
    }
}

pub fn symmetry_defect(a: &Mat<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat<f64> {
        let b = Mat::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let mut a = b.transpose() * &b;
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    #[test]
    fn cg_matches_cholesky() {
        let a = spd(30);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let rep = conjugate_gradient(|x, o| mat_vec(&a, x, o), &b, 1e-13, 500).unwrap();
        let direct = cholesky_solve(&a, &b).unwrap();
        let err = rep
            .solution
            .iter()
            .zip(&direct)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let lmin = sym_eigenvalues(&a)[0];
        assert!((rep.lambda_min_estimate - lmin).abs() / lmin < 1e-6);
    }

    #[test]
    fn cg_zero_rhs_gives_zero() {
        let a = spd(5);
        let rep = conjugate_gradient(|x, o| mat_vec(&a, x, o), &[0.0; 5], 1e-12, 10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_energy_decreases() {
        let a = spd(40);
        let b: Vec<f64> = (0..40).map(|i| (0.3 * i as f64).cos()).collect();
        let rep = conjugate_gradient(|x, o| mat_vec(&a, x, o), &b, 1e-12, 500).unwrap();
        for w in rep.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let a = spd(40);
        let b = vec![1.0; 40];
        let err = conjugate_gradient(|x, o| mat_vec(&a, x, o), &b, 1e-15, 2).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn eigen_sorted() {
        let a = spd(12);
        let (vals, vecs) = sym_eigen(&a).unwrap();
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let mut av = vec![0.0; 12];
        let v0: Vec<f64> = (0..12).map(|i| vecs[(i, 0)]).collect();
        mat_vec(&a, &v0, &mut av);
        for i in 0..12 {
            assert!((av[i] - vals[0] * v0[i]).abs() < 1e-12);
        }
    }
}
