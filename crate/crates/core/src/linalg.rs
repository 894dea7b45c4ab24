//! Dense kernels built on symmetric eigensolves and QR.

use nalgebra::{DMatrix, DVector};

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
pub(crate) fn sym_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Squared singular values of `b` (descending, clamped at zero) and the left
/// singular vectors of the first `keep(values)` of them.
///
/// The smaller Gram matrix is eigendecomposed; when that is `BᵀB`, left vectors
/// are recovered as `B v / σ` and re-orthonormalized.
pub(crate) fn left_singular(b: &DMatrix<f64>, keep: impl FnOnce(&[f64]) -> usize) -> (Vec<f64>, DMatrix<f64>) {
    let (n, m) = b.shape();
    if n <= m {
        let (vals, vecs) = sym_eigen_desc(b * b.transpose());
        let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
        let k = keep(&vals);
        return (vals, vecs.columns(0, k).into_owned());
    }
    let (vals, v) = sym_eigen_desc(b.tr_mul(b));
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
    let k = keep(&vals);
    let mut u = b * v.columns(0, k);
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let d = u.column(i).dot(&u.column(j));
                let ci = u.column(i).into_owned();
                u.column_mut(j).axpy(-d, &ci, 1.0);
            }
        }
        let nrm = u.column(j).norm();
        if nrm > 0.0 {
            u.column_mut(j).unscale_mut(nrm);
        }
    }
    (vals, u)
}

/// `Σ_{λ > tol} v vᵀ rhs / λ` for a symmetric positive-semidefinite `g`.
pub(crate) fn psd_pinv_solve(g: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = g.nrows();
    let (vals, vecs) = sym_eigen_desc(g);
    let tol = vals.first().copied().unwrap_or(0.0).max(0.0) * n as f64 * f64::EPSILON;
    let mut x = DVector::zeros(n);
    for (k, &l) in vals.iter().enumerate() {
        if l > tol {
            let v = vecs.column(k);
            x.axpy(v.dot(rhs) / l, &v, 1.0);
        }
    }
    x
}

/// Minimum-norm least-squares solution of `A x ≈ c`.
pub(crate) fn lstsq_min_norm(a: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let (n, p) = a.shape();
    if n >= p && p > 0 {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        if r.diagonal().iter().all(|d| d.abs() > 1e-10 * diag_max) {
            let qtc = qr.q().tr_mul(c);
            if let Some(x) = r.solve_upper_triangular(&qtc) {
                return x;
            }
        }
        return psd_pinv_solve(a.tr_mul(a), &a.tr_mul(c));
    }
    a.tr_mul(&psd_pinv_solve(a * a.transpose(), c))
}
