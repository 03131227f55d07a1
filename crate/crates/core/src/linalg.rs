//! Small dense helpers for symmetric positive-definite information matrices.
//!
//! Information matrices mix parameters with very different units (seconds,
//! dimensionless frequencies, linear amplitudes), so every factorization is
//! done on the diagonally equilibrated matrix `D⁻¹ A D⁻¹`, `D = diag(√A_ii)`.
//! Rank is judged there against a relative eigenvalue tolerance.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance below which a matrix is declared singular.
pub const RANK_TOL: f64 = 1e-12;

fn equilibrate(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix expected");
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular { pivot: d, tol: RANK_TOL });
        }
        scale.push(1.0 / d.sqrt());
    }
    let mut b = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    b = (&b + b.transpose()) * 0.5;
    Ok((b, scale))
}

fn check_rank(b: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(b.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > 0.0) || min < RANK_TOL * max {
        return Err(Error::Singular { pivot: min / max.max(f64::MIN_POSITIVE), tol: RANK_TOL });
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (b, s) = equilibrate(a)?;
    check_rank(&b)?;
    let chol = Cholesky::new(b).ok_or(Error::Singular { pivot: 0.0, tol: RANK_TOL })?;
    let inv = chol.inverse();
    let n = a.nrows();
    let out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * s[i] * s[j]);
    Ok((&out + out.transpose()) * 0.5)
}

/// Schur complement keeping the leading `keep × keep` block:
/// `A11 − A12 A22⁻¹ A21`, via a Cholesky solve on the eliminated block.
pub fn schur_keep(a: &DMatrix<f64>, keep: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert!(keep <= n);
    let a11 = a.view((0, 0), (keep, keep)).into_owned();
    if keep == n {
        return Ok(a11);
    }
    let a12 = a.view((0, keep), (keep, n - keep)).into_owned();
    let a22 = a.view((keep, keep), (n - keep, n - keep)).into_owned();
    let (b22, s) = equilibrate(&a22)?;
    check_rank(&b22)?;
    let chol = Cholesky::new(b22).ok_or(Error::Singular { pivot: 0.0, tol: RANK_TOL })?;
    // A22⁻¹ A21 = S B22⁻¹ S A21
    let mut rhs = a12.transpose();
    for (i, si) in s.iter().enumerate() {
        rhs.row_mut(i).scale_mut(*si);
    }
    let mut sol = chol.solve(&rhs);
    for (i, si) in s.iter().enumerate() {
        sol.row_mut(i).scale_mut(*si);
    }
    let out = a11 - &a12 * sol;
    Ok((&out + out.transpose()) * 0.5)
}

/// Smallest eigenvalue of the symmetric part, relative to the largest
/// absolute eigenvalue.
pub fn min_relative_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}
