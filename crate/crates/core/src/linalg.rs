//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// 2-norm condition number `σ_max / σ_min`; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Operator 2-norm of the inverse, `1 / σ_min`.
pub fn inverse_norm(m: &DMatrix<f64>) -> f64 {
    let min = m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        1.0 / min
    }
}

/// Solves `m x = b` by LU with partial pivoting.
pub fn solve(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() || m.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "cannot solve {}x{} system with {} right-hand-side entries",
            m.nrows(),
            m.ncols(),
            b.len()
        )));
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    m.clone()
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.iter().copied().collect())
        .ok_or(Error::Singular {
            condition: condition_number(m),
        })
}

/// Least-squares solution of `m x ≈ b` via SVD.
pub fn lstsq(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if m.nrows() != b.len() || m.nrows() < m.ncols() {
        return Err(Error::Dimension(format!(
            "least squares needs rows ≥ columns: {}x{} with {} entries",
            m.nrows(),
            m.ncols(),
            b.len()
        )));
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    svd.solve(&rhs, max * 1e-15)
        .ok()
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.iter().copied().collect())
        .ok_or(Error::Singular {
            condition: condition_number(m),
        })
}

/// `W` with `WᵀW ≈ cov⁻¹`; eigenvalues below `floor · λ_max` are raised to
/// that level so nearly collinear directions do not dominate.
pub fn whitening(cov: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let n = cov.nrows();
    let mut w = eig.eigenvectors.transpose();
    for i in 0..n {
        let ev = eig.eigenvalues[i].max(floor * max);
        let s = 1.0 / ev.sqrt();
        for c in 0..n {
            w[(i, c)] *= s;
        }
    }
    w
}

/// Solves a complex square system in place; `None` when singular.
pub(crate) fn solve_complex(
    n: usize,
    jac: &[Complex64],
    rhs: &[Complex64],
) -> Option<Vec<Complex64>> {
    let m = DMatrix::from_row_slice(n, n, jac);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let x = m.lu().solve(&b)?;
    if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Some(x.iter().copied().collect())
    } else {
        None
    }
}

/// Smallest singular value divided by the largest, for a complex matrix.
pub(crate) fn inverse_condition_complex(n: usize, jac: &[Complex64]) -> f64 {
    let m = DMatrix::from_row_slice(n, n, jac);
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}
