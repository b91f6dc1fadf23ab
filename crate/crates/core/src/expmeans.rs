//! Exponential links: per-link means from path MGFs.
//!
//! For a path of `N` exponential links with means `m_j`,
//! `1/M(t) = Π (1 + m_j t) = 1 + Σ_k e_k(m) t^k`, so `N` MGF values give the
//! elementary symmetric polynomials of the means by a Vandermonde solve and
//! the means themselves as roots of `z^N − e_1 z^{N−1} + … ± e_N`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::epsbuild::validate_tau;
use crate::linalg;
use crate::matching::{
    cluster, delta_ladder, dist, psi_stage1, Clustering, DeltaPolicy, LinkAssignment,
    LinkEstimate, MatchConfig, MatchResult, Member, Provenance, UnmatchedLink,
};
use crate::mgfest::empirical_mgf;
use crate::model::RoutingMatrix;
use crate::poly::SparsePoly;
use crate::polysolve::solve_univariate;
use crate::{Error, Result};

/// Relative imaginary part above which a root counts as complex.
pub const IMAG_TOL: f64 = 1e-8;
/// Relative gap below which two means count as coincident.
pub const DEGENERATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSystem {
    pub tau: Vec<f64>,
    pub mgf_hat: Vec<f64>,
    /// `t_j^k`, `k = 1..N`.
    #[serde(skip)]
    pub vandermonde: DMatrix<f64>,
    /// `1 / M̂(t_j)`.
    pub c_vec: Vec<f64>,
    /// `e_1..e_N`.
    pub esp: Vec<f64>,
}

/// Solves `T_τ e = c_τ − 1` from MGF values at `tau`.
pub fn build_mean_system(mgf: &[f64], tau: &[f64]) -> Result<MeanSystem> {
    let n = tau.len();
    validate_tau(tau, n)?;
    if mgf.len() != n {
        return Err(Error::Dimension(format!(
            "{} MGF values for {n} evaluation points",
            mgf.len()
        )));
    }
    for (&m, &t) in mgf.iter().zip(tau) {
        if m == 0.0 {
            return Err(Error::Domain(format!(
                "MGF estimate is 0 at t = {t}; use a smaller evaluation point"
            )));
        }
        if !(m > 0.0 && m <= 1.0) {
            return Err(Error::Domain(format!(
                "MGF value {m} at t = {t} is outside (0, 1]"
            )));
        }
    }
    let vandermonde = DMatrix::from_fn(n, n, |j, k| tau[j].powi(k as i32 + 1));
    let c_vec: Vec<f64> = mgf.iter().map(|m| 1.0 / m).collect();
    let rhs: Vec<f64> = c_vec.iter().map(|c| c - 1.0).collect();
    let esp = linalg::solve(&vandermonde, &rhs)?;
    Ok(MeanSystem {
        tau: tau.to_vec(),
        mgf_hat: mgf.to_vec(),
        vandermonde,
        c_vec,
        esp,
    })
}

pub fn build_mean_system_from_samples(samples: &[f64], tau: &[f64]) -> Result<MeanSystem> {
    let mgf = tau
        .iter()
        .map(|&t| empirical_mgf(samples, t))
        .collect::<Result<Vec<_>>>()?;
    build_mean_system(&mgf, tau)
}

/// Evaluation points for a path of `n` links: `t_k = 2k / (n·ȳ)`, where `ȳ`
/// is the mean path delay, so `t·Y` stays of order one. Halving the scale
/// costs about an order of magnitude in exact-data accuracy for `n = 4`.
pub fn default_tau(n: usize, mean_delay: f64) -> Result<Vec<f64>> {
    if !(mean_delay > 0.0 && mean_delay.is_finite()) {
        return Err(Error::Domain(format!(
            "mean delay must be positive, got {mean_delay}"
        )));
    }
    Ok((1..=n)
        .map(|k| 2.0 * k as f64 / (n as f64 * mean_delay))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSolution {
    /// Real parts of the roots, ascending.
    pub means: Vec<f64>,
    /// Some root had a non-negligible imaginary part (noisy data).
    pub complex: bool,
    /// Two roots nearly coincide.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// Roots of the Vieta polynomial built from `e`.
pub fn solve_means(system: &MeanSystem) -> Result<MeanSolution> {
    let e = &system.esp;
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("elementary symmetric values are not finite".into()));
    }
    let n = e.len();
    // Ascending coefficients: z^{N−k} carries (−1)^k e_k.
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    for (k, &ek) in e.iter().enumerate() {
        let sign = if (k + 1) % 2 == 0 { 1.0 } else { -1.0 };
        coeffs[n - k - 1] = sign * ek;
    }
    let roots = solve_univariate(&coeffs)?;
    Ok(classify_roots(&roots))
}

fn classify_roots(roots: &[Complex64]) -> MeanSolution {
    let mut warnings = Vec::new();
    let complex = roots
        .iter()
        .any(|z| z.im.abs() > IMAG_TOL * z.re.abs().max(1.0));
    if complex {
        warnings.push("complex roots from noisy data; real parts returned".to_string());
    }
    let mut means: Vec<f64> = roots.iter().map(|z| z.re).collect();
    means.sort_by(f64::total_cmp);
    let scale = means.iter().fold(1.0f64, |a, m| a.max(m.abs()));
    let degenerate = roots.iter().enumerate().any(|(i, a)| {
        roots[i + 1..]
            .iter()
            .any(|b| (a - b).norm() < DEGENERATE_TOL * scale)
    });
    if degenerate {
        warnings.push("coincident means: the system Jacobian is singular".to_string());
    }
    MeanSolution {
        means,
        complex,
        degenerate,
        warnings,
    }
}

/// `e_1(x), …, e_n(x)` as polynomials in `n` variables.
pub fn elementary_symmetric(n: usize) -> Vec<SparsePoly<f64>> {
    (1..=n)
        .map(|k| {
            let mut p = SparsePoly::zero(n);
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize == k {
                    let e = (0..n).map(|v| (mask >> v) & 1).collect();
                    p.add_term(e, 1.0);
                }
            }
            p
        })
        .collect()
}

fn link_estimate(j: usize, a: &LinkAssignment, c: &Clustering) -> LinkEstimate {
    let class = &c.classes[a.class];
    LinkEstimate {
        link_id: j + 1,
        weights: Vec::new(),
        mean: Some(a.value[0]),
        stage: a.stage,
        matched: None,
        provenance: Provenance {
            paths: class.paths().into_iter().map(|p| p + 1).collect(),
            class_members: class.members.clone(),
        },
    }
}

fn assign(
    c: &Clustering,
    matrix: &RoutingMatrix,
    strict: bool,
) -> Result<(BTreeMap<usize, LinkAssignment>, Vec<UnmatchedLink>)> {
    let sets = matrix.incidence_sets();
    let mut assigned = BTreeMap::new();
    let mut unmatched = Vec::new();
    for j in 0..matrix.num_links() {
        match psi_stage1(c, &sets, &[j]) {
            Ok(a) => assigned.extend(a),
            Err(e) if !strict => unmatched.push(UnmatchedLink {
                link_id: j + 1,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((assigned, unmatched))
}

/// Assigns a mean to every link by the intersection rule. `sets[i]` holds
/// the estimated means of path `i`. All links, including those on a single
/// path, use the intersection rule: the mean sets contain no spurious values.
pub fn match_means(
    sets: &[Vec<f64>],
    matrix: &RoutingMatrix,
    cfg: &MatchConfig,
    truth: Option<&[f64]>,
) -> Result<MatchResult> {
    if sets.len() != matrix.num_paths() {
        return Err(Error::Dimension(format!(
            "{} mean sets for {} paths",
            sets.len(),
            matrix.num_paths()
        )));
    }
    let points: Vec<Member> = sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.iter().map(move |&m| Member {
                path: i,
                point: vec![m],
            })
        })
        .collect();
    let (clustering, assigned, unmatched) = match cfg.delta {
        DeltaPolicy::Fixed(delta) => {
            let c = cluster(&points, delta, cfg.shrink, cfg.max_retries)?;
            let (a, u) = assign(&c, matrix, cfg.strict)?;
            (c, a, u)
        }
        DeltaPolicy::Auto => {
            let mut result = None;
            let mut first_err = None;
            for delta in delta_ladder(&points, cfg.max_ladder) {
                let Ok(c) = cluster(&points, delta, cfg.shrink, 0) else {
                    continue;
                };
                match assign(&c, matrix, true) {
                    Ok((a, u)) => {
                        result = Some((c, a, u));
                        break;
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            match result {
                Some(r) => r,
                None if !cfg.strict && !points.is_empty() => {
                    let delta = delta_ladder(&points, 1).first().copied().unwrap_or(1e-12);
                    let c = cluster(&points, delta, cfg.shrink, cfg.max_retries)?;
                    let (a, u) = assign(&c, matrix, false)?;
                    (c, a, u)
                }
                None => {
                    return Err(first_err.unwrap_or_else(|| {
                        Error::Domain("no points from different paths to match".into())
                    }))
                }
            }
        }
    };
    let links: Vec<LinkEstimate> = assigned
        .iter()
        .map(|(&j, a)| link_estimate(j, a, &clustering))
        .collect();
    let error_norm = truth.filter(|_| unmatched.is_empty()).map(|t| {
        let est: Vec<f64> = links.iter().map(|l| l.mean.unwrap()).collect();
        dist(&est, t)
    });
    Ok(MatchResult {
        links,
        unmatched,
        delta: clustering.delta,
        delta_retries: clustering.retries,
        error_norm,
        consensus: false,
    })
}
