//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = Complex { re: 0.0, im: 0.0 };
pub const ONE: C64 = Complex { re: 1.0, im: 0.0 };

#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::new(phase.cos(), phase.sin())
}

#[inline]
pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// (M + M^H) / 2
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Column-major vectorization, matching `vec(.)`.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols, "vector length does not match shape");
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// Cholesky factor of a Hermitian positive-definite matrix (lower triangular).
pub fn cholesky_factor(m: &CMat) -> Result<CMat> {
    hermitian_part(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::numeric("matrix is not Hermitian positive definite"))
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn hpd_inverse(m: &CMat) -> Result<CMat> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::numeric("matrix is not Hermitian positive definite"))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// Solves `M X = B` for Hermitian positive-definite `M`.
pub fn hpd_solve(m: &CMat, b: &CMat) -> Result<CMat> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::numeric("matrix is not Hermitian positive definite"))?;
    Ok(chol.solve(b))
}

/// Natural log-determinant of a Hermitian positive-definite matrix.
pub fn hpd_logdet(m: &CMat) -> Result<f64> {
    let l = cholesky_factor(m)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
}

/// General inverse through LU; errors on a numerically singular matrix.
pub fn inverse(m: &CMat) -> Result<CMat> {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let lu = m.clone().lu();
    let det = lu.determinant().norm();
    if !det.is_finite() || det <= (scale * 1e-14).powi(m.nrows() as i32) {
        return Err(Error::numeric("matrix is singular"));
    }
    lu.try_inverse()
        .ok_or_else(|| Error::numeric("matrix is singular"))
}

/// Moore-Penrose pseudo-inverse through the SVD.
pub fn pinv(m: &CMat) -> CMat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return CMat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (r.max(c) as f64) * f64::EPSILON;
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let mut out = CMat::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let ui = u.column(i);
            let vi = v_t.row(i).adjoint();
            out += (&vi * ui.adjoint()).scale(1.0 / s);
        }
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix: ascending real eigenvalues and
/// the matching orthonormal eigenvectors as columns.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitian_part(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest absolute entry-wise difference.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
