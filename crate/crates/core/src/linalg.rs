//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Ratio of extreme eigenvalues of a Hermitian positive semi-definite matrix.
pub fn hermitian_condition(gram: &DMatrix<Complex64>) -> f64 {
    if gram.is_empty() {
        return 1.0;
    }
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `X (X^H X)^{-1}` for tall `X` with independent columns, guarded by
/// `max_cond` on the Gram matrix.
pub fn right_pseudo_factor(
    atoms: &DMatrix<Complex64>,
    max_cond: f64,
) -> Result<DMatrix<Complex64>> {
    let gram = atoms.adjoint() * atoms;
    let cond = hermitian_condition(&gram);
    if cond > max_cond {
        return Err(Error::IllConditioned { cond });
    }
    let inv = gram
        .try_inverse()
        .ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    Ok(atoms * inv)
}

pub fn column_norms(m: &DMatrix<Complex64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

/// Relative Frobenius distance `||a - b|| / ||b||` (absolute when `b = 0`).
pub fn relative_error(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}

pub fn unit(v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(v / Complex64::new(n, 0.0))
}
