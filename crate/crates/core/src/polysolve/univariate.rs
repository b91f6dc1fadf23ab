use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

/// Horner evaluation of `Σ c_k z^k` together with its derivative and the
/// absolute magnitude `Σ |c_k| |z|^k`.
fn horner(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64, f64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    let mut mag = 0.0;
    let r = z.norm();
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
        mag = mag * r + c.abs();
    }
    (p, dp, mag)
}

/// Roots of `c_0 + c_1 z + … + c_n z^n` (ascending coefficients).
///
/// Eigenvalues of the companion matrix, each polished by Newton until the
/// relative residual `|p(z)| / Σ|c_k||z|^k` drops below `1e-12`.
pub fn solve_univariate(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let Some(deg) = coeffs.iter().rposition(|&c| c != 0.0) else {
        return Err(Error::Domain("zero polynomial has no isolated roots".into()));
    };
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("polynomial coefficients must be finite".into()));
    }
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    let monic: Vec<f64> = coeffs[..=deg].iter().map(|c| c / lead).collect();
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -monic[i];
    }
    let eig = companion.complex_eigenvalues();
    let mut roots = Vec::with_capacity(deg);
    for &z0 in eig.iter() {
        let mut z = z0;
        for _ in 0..20 {
            let (p, dp, mag) = horner(&monic, z);
            if p.norm() <= 1e-12 * mag.max(f64::MIN_POSITIVE) || dp.norm() == 0.0 {
                break;
            }
            let next = z - p / dp;
            if !next.re.is_finite() || !next.im.is_finite() {
                break;
            }
            z = next;
        }
        roots.push(z);
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(roots)
}
