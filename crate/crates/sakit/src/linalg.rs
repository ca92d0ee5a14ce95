//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Solves `m x = rhs` by LU, reporting singular systems as rank deficiency.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    lu.solve(rhs).filter(|x| x.iter().all(|v| v.is_finite())).ok_or_else(|| Error::RankDeficient(what.to_string()))
}

/// Numerical rank from the singular values, with the usual `max(r, c)·ε·σ_max` cutoff.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}
