//! Empirical MGF estimates, evaluation-point selection and sample-size bounds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::epsbuild::{self, validate_tau};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GhMix;

pub const DEFAULT_TAU_RETRIES: usize = 50;

/// `(1/L) Σ_l exp(−t Y_l)`.
pub fn empirical_mgf(samples: &[f64], t: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("MGF point must be > 0, got {t}")));
    }
    let mut acc = 0.0;
    for &y in samples {
        if !(y >= 0.0) {
            return Err(Error::Domain(format!("negative or NaN delay sample {y}")));
        }
        acc += (-t * y).exp();
    }
    Ok(acc / samples.len() as f64)
}

/// Exact MGF of a sum of independent links.
pub fn path_mgf(mixes: &[&GhMix], t: f64) -> Result<f64> {
    mixes.iter().map(|m| m.mgf(t)).product()
}

/// How evaluation points are picked.
#[derive(Debug, Clone, PartialEq)]
pub enum TauStrategy {
    /// Log-uniform draws on `[lo_factor·λ_min, hi_factor·λ_max]`.
    LogUniform { lo_factor: f64, hi_factor: f64 },
    /// Fixed points, validated but not resampled.
    Explicit(Vec<f64>),
}

impl Default for TauStrategy {
    fn default() -> Self {
        TauStrategy::LogUniform {
            lo_factor: 0.05,
            hi_factor: 5.0,
        }
    }
}

/// Picks `d·n` distinct positive points such that `cond(T_τ)` stays below
/// `condition_limit`, resampling up to `retries` times.
pub fn choose_tau(
    n: usize,
    lambda: &[f64],
    strategy: &TauStrategy,
    seed: u64,
    condition_limit: f64,
    retries: usize,
) -> Result<Vec<f64>> {
    let count = (lambda.len() - 1) * n;
    if count == 0 {
        return Err(Error::Domain("need at least one evaluation point".into()));
    }
    match strategy {
        TauStrategy::Explicit(tau) => {
            validate_tau(tau, count)?;
            epsbuild::build_t_tau(tau, n, lambda, condition_limit)?;
            Ok(tau.clone())
        }
        TauStrategy::LogUniform {
            lo_factor,
            hi_factor,
        } => {
            let lmin = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
            let lmax = lambda.iter().cloned().fold(0.0, f64::max);
            let (lo, hi) = ((lo_factor * lmin).ln(), (hi_factor * lmax).ln());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut best = f64::INFINITY;
            for _ in 0..retries.max(1) {
                let mut tau: Vec<f64> = (0..count)
                    .map(|_| rng.random_range(lo..hi).exp())
                    .collect();
                tau.sort_by(f64::total_cmp);
                if validate_tau(&tau, count).is_err() {
                    continue;
                }
                match epsbuild::build_t_tau(&tau, n, lambda, condition_limit) {
                    Ok(_) => return Ok(tau),
                    Err(Error::Singular { condition }) => best = best.min(condition),
                    Err(e) => return Err(e),
                }
            }
            Err(Error::TauRejected {
                attempts: retries.max(1),
                best_condition: best,
            })
        }
    }
}

/// MGF estimates and derived constants for one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgfProbe {
    pub tau: Vec<f64>,
    pub mgf_hat: Vec<f64>,
    /// `(λ_{d+1} + t)^n M̂(t)`.
    pub mu_hat: Vec<f64>,
    /// `μ̂(t) − λ_{d+1}^n`.
    pub c_hat: Vec<f64>,
    /// Sample count; `None` for exact MGF values.
    pub samples: Option<usize>,
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
}

impl MgfProbe {
    pub fn from_mgf_values(
        tau: &[f64],
        mgf: Vec<f64>,
        n: usize,
        lambda: &[f64],
        samples: Option<usize>,
    ) -> Result<Self> {
        if mgf.len() != tau.len() {
            return Err(Error::Dimension(format!(
                "{} MGF values for {} points",
                mgf.len(),
                tau.len()
            )));
        }
        if let Some(v) = mgf.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("MGF estimate {v} outside [0, 1]")));
        }
        let last = *lambda.last().expect("rates");
        let mu_hat: Vec<f64> = tau
            .iter()
            .zip(&mgf)
            .map(|(&t, &m)| (last + t).powi(n as i32) * m)
            .collect();
        let base = last.powi(n as i32);
        let c_hat = mu_hat.iter().map(|m| m - base).collect();
        Ok(MgfProbe {
            tau: tau.to_vec(),
            mgf_hat: mgf,
            mu_hat,
            c_hat,
            samples,
            kappa: None,
            eps: None,
        })
    }
}

/// Empirical MGFs of `samples` at `tau`, turned into the constants `ĉ_τ`.
pub fn assemble_constants(
    samples: &[f64],
    tau: &[f64],
    n: usize,
    lambda: &[f64],
) -> Result<MgfProbe> {
    let mgf = tau
        .iter()
        .map(|&t| empirical_mgf(samples, t))
        .collect::<Result<Vec<_>>>()?;
    MgfProbe::from_mgf_values(tau, mgf, n, lambda, Some(samples.len()))
}

/// Constants from the exact product of link MGFs.
pub fn assemble_constants_exact(
    mixes: &[&GhMix],
    tau: &[f64],
    lambda: &[f64],
) -> Result<MgfProbe> {
    let mgf = tau
        .iter()
        .map(|&t| path_mgf(mixes, t))
        .collect::<Result<Vec<_>>>()?;
    MgfProbe::from_mgf_values(tau, mgf, mixes.len(), lambda, None)
}

/// MGF estimates on a grid together with the covariance of the estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct MgfMoments {
    pub tau: Vec<f64>,
    pub mgf: Vec<f64>,
    /// `Cov(M̂(s), M̂(t)) = (M(s+t) − M(s)M(t)) / L`, estimated from the
    /// samples; `None` for exact values.
    pub cov: Option<DMatrix<f64>>,
    pub samples: Option<usize>,
}

/// Empirical MGF and its covariance over `tau`.
pub fn mgf_moments(samples: &[f64], tau: &[f64]) -> Result<MgfMoments> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(t) = tau.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("MGF point must be > 0, got {t}")));
    }
    if let Some(y) = samples.iter().find(|y| !(**y >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN delay sample {y}")));
    }
    let k = tau.len();
    let (sum, outer) = samples
        .par_chunks(1 << 14)
        .map(|chunk| {
            let mut sum = vec![0.0; k];
            let mut outer = vec![0.0; k * k];
            let mut e = vec![0.0; k];
            for &y in chunk {
                for (ei, &t) in e.iter_mut().zip(tau) {
                    *ei = (-t * y).exp();
                }
                for i in 0..k {
                    sum[i] += e[i];
                    for j in i..k {
                        outer[i * k + j] += e[i] * e[j];
                    }
                }
            }
            (sum, outer)
        })
        .reduce(
            || (vec![0.0; k], vec![0.0; k * k]),
            |(mut a, mut b), (c, d)| {
                a.iter_mut().zip(c).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                (a, b)
            },
        );
    let l = samples.len() as f64;
    let mgf: Vec<f64> = sum.iter().map(|s| s / l).collect();
    let cov = DMatrix::from_fn(k, k, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        (outer[a * k + b] / l - mgf[a] * mgf[b]) / l
    });
    Ok(MgfMoments {
        tau: tau.to_vec(),
        mgf,
        cov: Some(cov),
        samples: Some(samples.len()),
    })
}

/// Exact path MGFs over `tau`.
pub fn mgf_moments_exact(mixes: &[&GhMix], tau: &[f64]) -> Result<MgfMoments> {
    let mgf = tau
        .iter()
        .map(|&t| path_mgf(mixes, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(MgfMoments {
        tau: tau.to_vec(),
        mgf,
        cov: None,
        samples: None,
    })
}

/// Geometric grid of `max(16, 2·d·n)` points on `[0.05·λ_min, 4·λ_max]`.
pub fn default_grid(n: usize, lambda: &[f64]) -> Vec<f64> {
    let count = (2 * (lambda.len() - 1) * n).max(16);
    let lmin = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = lambda.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = ((0.05 * lmin).ln(), (4.0 * lmax).ln());
    (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn union_bound(eps: f64, points: usize, l: u64) -> f64 {
    points as f64 * (-2.0 * eps * eps * l as f64).exp()
}

/// Smallest `L ≥ 1` with `points · exp(−2 ε² L) ≤ κ` (Hoeffding with a union
/// bound over the evaluation points).
pub fn required_samples(eps: f64, kappa: f64, points: usize) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0,1), got {eps}")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Domain(format!("kappa must lie in (0,1), got {kappa}")));
    }
    if points == 0 {
        return Err(Error::Domain("need at least one point".into()));
    }
    let x = (points as f64 / kappa).ln() / (2.0 * eps * eps);
    let mut l = x.ceil().max(1.0) as u64;
    while l > 1 && union_bound(eps, points, l - 1) <= kappa {
        l -= 1;
    }
    while union_bound(eps, points, l) > kappa {
        l += 1;
    }
    Ok(l)
}

/// Per-point MGF tolerance that keeps `‖T_τ⁻¹ ĉ − E(w)‖ < eps_delta`:
/// `eps_delta / (‖T_τ⁻¹‖ · √(d·n) · max_k (λ_{d+1} + t_k)^n)`.
pub fn per_point_tolerance(
    eps_delta: f64,
    t_matrix: &DMatrix<f64>,
    tau: &[f64],
    n: usize,
    lambda: &[f64],
) -> f64 {
    let last = *lambda.last().expect("rates");
    let scale = tau
        .iter()
        .map(|&t| (last + t).powi(n as i32))
        .fold(0.0, f64::max);
    eps_delta / (linalg::inverse_norm(t_matrix) * (tau.len() as f64).sqrt() * scale)
}
