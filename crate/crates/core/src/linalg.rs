//! Small dense linear algebra helpers shared across modules.
//!
//! Everything here operates on matrices of size at most a few dozen, so
//! numerical cost is irrelevant; determinism and robustness are not.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the nullspace of `a`, as matrix columns.
///
/// Rank decisions use `tol_rel` relative to the largest singular value
/// (absolute `tol_rel` when `a` is numerically zero).
pub fn nullspace(a: &DMatrix<f64>, tol_rel: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad wide matrices with zero rows so the full V factor is available.
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let thresh = if smax > 0.0 { smax * tol_rel } else { tol_rel };
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= thresh {
            cols.push(v_t.row(i).transpose());
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Gram-Schmidt on the columns of `basis` with respect to the inner product
/// `<u,v> = u^T g v`. Columns below `tol` norm after projection are dropped.
pub fn gram_schmidt_metric(basis: &DMatrix<f64>, g: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for j in 0..basis.ncols() {
        let mut v: DVector<f64> = basis.column(j).into();
        for q in &out {
            let c = q.dot(&(g * &v));
            v -= q * c;
        }
        let n2 = v.dot(&(g * &v));
        if n2.sqrt() > tol {
            out.push(v / n2.sqrt());
        }
    }
    if out.is_empty() {
        DMatrix::zeros(basis.nrows(), 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
/// Accurate to machine precision for the small, well-scaled matrices used here.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let norm = m.iter().map(|x| x.abs()).fold(0.0_f64, f64::max) * n as f64;
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(s as i32);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Solves the symmetric positive definite system `g x = b` by Cholesky.
pub fn solve_spd(g: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    g.clone().cholesky().map(|ch| ch.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inv_spd(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    g.clone().cholesky().map(|ch| ch.inverse())
}

/// Numerical rank with a relative singular value threshold.
pub fn rank(a: &DMatrix<f64>, tol_rel: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > smax * tol_rel).count()
}
