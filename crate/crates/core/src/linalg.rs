//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scaled_identity(n: usize, value: f64) -> CMat {
    CMat::from_diagonal_element(n, n, c(value, 0.0))
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Cholesky factorization that rejects indefinite input.
///
/// The complex square root always exists, so a negative pivot shows up as a
/// non-real diagonal entry instead of a factorization failure.
fn cholesky_hpd(a: &CMat) -> Result<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    let chol = hermitian_part(a).cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || d.im.abs() > 1e-12 * d.re || !d.re.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
    }
    Ok(chol)
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn ln_det_hpd(a: &CMat) -> Result<f64> {
    let chol = cholesky_hpd(a)?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..a.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>())
}

pub fn log2_det_hpd(a: &CMat) -> Result<f64> {
    Ok(ln_det_hpd(a)? / LN_2)
}

/// `log2 det(base + inc) - log2 det(base)` for Hermitian PD `base` and
/// Hermitian PSD `inc`, evaluated as a sum of `log1p` over the eigenvalues of
/// the whitened increment so that small increments keep full relative
/// precision.
pub fn log2_det_ratio(base: &CMat, inc: &CMat) -> Result<f64> {
    let chol = cholesky_hpd(base)?;
    let l = chol.l();
    let x = l.solve_lower_triangular(inc).ok_or(Error::NotPositiveDefinite)?;
    let w = l.solve_lower_triangular(&x.adjoint()).ok_or(Error::NotPositiveDefinite)?;
    let ev = hermitian_part(&w).symmetric_eigenvalues();
    Ok(ev.iter().map(|&l| l.max(0.0).ln_1p()).sum::<f64>() / LN_2)
}

pub fn inv_hpd(a: &CMat) -> Result<CMat> {
    let chol = cholesky_hpd(a)?;
    Ok(hermitian_part(&chol.inverse()))
}

/// Lower-triangular `L` with `A = L L^H`.
pub fn cholesky_lower(a: &CMat) -> Result<CMat> {
    let chol = cholesky_hpd(a)?;
    Ok(chol.l())
}

pub fn eigenvalues_hermitian(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigenvalues_hermitian(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Hermitian projection with every eigenvalue raised to at least `floor`.
pub fn clamp_eigenvalues(a: &CMat, floor: f64) -> CMat {
    let eig = hermitian_part(a).symmetric_eigen();
    let lambda = eig.eigenvalues.map(|l| c(l.max(floor), 0.0));
    let v = &eig.eigenvectors;
    hermitian_part(&(v * CMat::from_diagonal(&lambda) * v.adjoint()))
}

pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut col) = (0, 0);
    for b in blocks {
        out.view_mut((r, col), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        col += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut col = 0;
    for b in blocks {
        out.view_mut((0, col), (rows, b.ncols())).copy_from(b);
        col += b.ncols();
    }
    out
}

/// `A A^H`.
pub fn gram(a: &CMat) -> CMat {
    hermitian_part(&(a * a.adjoint()))
}

/// `H S H^H` for a covariance `S`.
pub fn congruence(h: &CMat, s: &CMat) -> CMat {
    hermitian_part(&(h * s * h.adjoint()))
}
