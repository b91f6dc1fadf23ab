//! End-to-end estimation: MGF constants, path systems, roots, matching.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epsbuild::{build_eps, estimate_rhs, DEFAULT_CONDITION_LIMIT};
use crate::expmeans::{build_mean_system, default_tau, solve_means};
use crate::linalg;
use crate::matching::{consensus_match, error_norm, match_links, DeltaPolicy, MatchConfig, MatchResult, PathSolutions};
use crate::mgfest::{default_grid, empirical_mgf, mgf_moments, mgf_moments_exact, MgfMoments};
use crate::model::{GhMix, RoutingMatrix};
use crate::poly::PolySystem;
use crate::polysolve::{solve_system, SolverConfig};
use crate::refine::{refine_weights, RefineOutcome, DEFAULT_MAX_SHIFT};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gh,
    Exp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    /// GH model: a geometric grid with more points than unknowns and
    /// covariance-weighted least squares. Exponential model: `N` points
    /// scaled by the mean path delay.
    Auto,
    /// One list of points per path, in path order. The GH model needs at
    /// least `d·N_i` points; extra points are used in least squares.
    Explicit(Vec<Vec<f64>>),
}

pub const EXACT_IMAG_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub tau: TauPolicy,
    pub seed: u64,
    pub condition_limit: f64,
    pub solver: SolverConfig,
    pub matching: MatchConfig,
    /// Roots whose imaginary parts all fall below this are projected to their
    /// real parts. `None`: [`EXACT_IMAG_TOL`] with exact MGFs; with sampled
    /// MGFs every root is projected, since noise can turn a real pair of
    /// roots into a complex conjugate pair.
    pub imag_tol: Option<f64>,
    /// Refit matched weights to the MGF estimates of all paths jointly
    /// (sampled GH mode only).
    pub refine: bool,
    pub max_shift: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: TauPolicy::Auto,
            seed: 0,
            condition_limit: DEFAULT_CONDITION_LIMIT,
            solver: SolverConfig::default(),
            matching: MatchConfig::default(),
            imag_tol: None,
            refine: true,
            max_shift: DEFAULT_MAX_SHIFT,
        }
    }
}

/// Where path MGF values come from.
#[derive(Debug, Clone, Copy)]
pub enum MgfSource<'a> {
    /// Delay samples keyed by 0-based path index.
    Samples(&'a BTreeMap<usize, Vec<f64>>),
    /// Ground-truth link distributions; MGFs are exact products.
    ExactGh(&'a [GhMix]),
    /// Ground-truth exponential link means.
    ExactMeans(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    /// 1-based.
    pub path_id: usize,
    pub links: Vec<usize>,
    pub tau: Vec<f64>,
    pub mgf_hat: Vec<f64>,
    /// Right-hand side of the path system.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rhs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    pub roots_found: usize,
    pub real_roots: usize,
    pub reduced: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub model: ModelKind,
    /// Rates used for estimation (GH model).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rates: Vec<f64>,
    pub seed: u64,
    pub exact_mgf: bool,
    pub delta_policy: String,
    pub paths: Vec<PathReport>,
    pub result: MatchResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefineOutcome>,
}

fn path_samples<'a>(samples: &'a BTreeMap<usize, Vec<f64>>, path: usize) -> Result<&'a [f64]> {
    match samples.get(&path) {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(Error::EmptySamples.at_path(path + 1)),
        None => Err(Error::Domain(format!("no samples for path {}", path + 1)).at_path(path + 1)),
    }
}

fn delta_label(p: &DeltaPolicy) -> String {
    match p {
        DeltaPolicy::Auto => "auto".into(),
        DeltaPolicy::Fixed(d) => format!("{d}"),
    }
}

fn explicit_tau(policy: &TauPolicy, path: usize, count: usize) -> Result<Option<Vec<f64>>> {
    match policy {
        TauPolicy::Auto => Ok(None),
        TauPolicy::Explicit(all) => {
            let tau = all.get(path).ok_or_else(|| {
                Error::Dimension(format!("no evaluation points given for path {}", path + 1))
            })?;
            if tau.len() != count {
                return Err(Error::Dimension(format!(
                    "path {} needs {count} evaluation points, got {}",
                    path + 1,
                    tau.len()
                )));
            }
            Ok(Some(tau.clone()))
        }
    }
}

/// Evaluation points for the GH system of a path with `n` links.
pub fn gh_tau(
    n: usize,
    lambda: &[f64],
    cfg: &PipelineConfig,
    path: usize,
) -> Result<Vec<f64>> {
    let d = lambda.len() - 1;
    match &cfg.tau {
        TauPolicy::Auto => Ok(default_grid(n, lambda)),
        TauPolicy::Explicit(all) => {
            let tau = all.get(path).ok_or_else(|| {
                Error::Dimension(format!("no evaluation points given for path {}", path + 1))
            })?;
            if tau.len() < d * n {
                return Err(Error::Dimension(format!(
                    "path {} needs at least {} evaluation points, got {}",
                    path + 1,
                    d * n,
                    tau.len()
                )));
            }
            Ok(tau.clone())
        }
    }
}

struct GhPath {
    report: PathReport,
    solutions: PathSolutions,
    moments: MgfMoments,
}

fn gh_path(
    matrix: &RoutingMatrix,
    lambda: &[f64],
    source: MgfSource<'_>,
    cfg: &PipelineConfig,
    path: usize,
) -> Result<GhPath> {
    let links = matrix.path_links(path);
    let n = links.len();
    let d = lambda.len() - 1;
    let tau = gh_tau(n, lambda, cfg, path)?;
    let moments = match source {
        MgfSource::Samples(s) => mgf_moments(path_samples(s, path)?, &tau)?,
        MgfSource::ExactGh(mixes) => {
            let on_path: Vec<&GhMix> = links.iter().map(|&j| &mixes[j]).collect();
            mgf_moments_exact(&on_path, &tau)?
        }
        MgfSource::ExactMeans(_) => {
            return Err(Error::Domain(
                "exponential means cannot drive the GH model".into(),
            ))
        }
    };
    let (rhs, condition) = estimate_rhs(
        &tau,
        &moments.mgf,
        moments.cov.as_ref(),
        n,
        lambda,
        cfg.condition_limit,
    )?;
    let system = PolySystem::new(build_eps(n, lambda), rhs.clone(), d)?;
    let sol = solve_system(&system, &cfg.solver)?;
    let mut warnings = sol.warnings.clone();
    let imag_tol = cfg.imag_tol.unwrap_or(match source {
        MgfSource::Samples(_) => f64::INFINITY,
        _ => EXACT_IMAG_TOL,
    });
    let real: Vec<Vec<f64>> = sol.real_roots(imag_tol);
    // True weights form valid GH densities; roots with an invalid block are
    // dropped unless that would leave nothing to match.
    let valid: Vec<Vec<f64>> = real
        .iter()
        .filter(|r| {
            r.chunks(d)
                .all(|b| GhMix::from_reduced(lambda.to_vec(), b).is_ok())
        })
        .cloned()
        .collect();
    let roots = if valid.is_empty() && !real.is_empty() {
        warnings.push("no root gives valid GH densities on every link".into());
        real
    } else {
        valid
    };
    let mut reduced: Vec<Vec<f64>> = Vec::new();
    for r in &roots {
        let head = &r[..d];
        if !reduced
            .iter()
            .any(|v| v.iter().zip(head).all(|(a, b)| (a - b).abs() < cfg.solver.dedup_tol))
        {
            reduced.push(head.to_vec());
        }
    }
    reduced.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if roots.is_empty() {
        warnings.push("no real roots".into());
    }
    let report = PathReport {
        path_id: path + 1,
        links: links.iter().map(|j| j + 1).collect(),
        tau,
        mgf_hat: moments.mgf.clone(),
        rhs,
        condition: Some(condition),
        samples: moments.samples,
        roots_found: sol.roots.len(),
        real_roots: roots.len(),
        reduced: reduced.clone(),
        warnings,
    };
    Ok(GhPath {
        report,
        solutions: PathSolutions {
            path,
            reduced,
            roots,
        },
        moments,
    })
}

/// GH weights for every link. `truth`, when given, holds the full `d + 1`
/// weight vectors used for the error norm.
pub fn estimate_gh(
    matrix: &RoutingMatrix,
    lambda: &[f64],
    source: MgfSource<'_>,
    cfg: &PipelineConfig,
    truth: Option<&[Vec<f64>]>,
) -> Result<EstimateReport> {
    crate::model::validate_rates(lambda)?;
    if lambda.len() < 2 {
        return Err(Error::Domain("GH model needs at least two rates".into()));
    }
    if let MgfSource::ExactGh(mixes) = source {
        if mixes.len() != matrix.num_links() {
            return Err(Error::Dimension(format!(
                "{} link distributions for {} links",
                mixes.len(),
                matrix.num_links()
            )));
        }
    }
    let per_path: Vec<GhPath> = (0..matrix.num_paths())
        .into_par_iter()
        .map(|i| gh_path(matrix, lambda, source, cfg, i).map_err(|e| wrap(e, i)))
        .collect::<Result<Vec<_>>>()?;
    let d = lambda.len() - 1;
    let solutions: Vec<PathSolutions> = per_path.iter().map(|p| p.solutions.clone()).collect();
    let matching = MatchConfig {
        rates: Some(lambda.to_vec()),
        ..cfg.matching.clone()
    };
    let sampled = per_path.iter().all(|p| p.moments.cov.is_some());
    let joint = sampled && cfg.refine;
    let matched = match match_links(&solutions, matrix, d, &matching, truth) {
        Ok(r) => Some(r),
        Err(Error::Ambiguous { .. } | Error::MatchFailure { .. }) if joint => None,
        Err(e) => return Err(e),
    };
    if !joint {
        return Ok(gh_report(lambda, source, cfg, per_path, matched.expect("errors returned above"), None));
    }
    // Both the clustering rule and the consensus choice seed a refinement;
    // the one with the smaller weighted misfit is kept.
    let moments: Vec<MgfMoments> = per_path.iter().map(|p| p.moments.clone()).collect();
    let mut candidates: Vec<MatchResult> = matched.into_iter().filter(|r| r.unmatched.is_empty()).collect();
    candidates.push(consensus_match(&solutions, matrix, d, truth)?);
    let mut best: Option<(MatchResult, RefineOutcome)> = None;
    for mut result in candidates {
        let initial: Vec<Vec<f64>> = result
            .links
            .iter()
            .map(|l| l.weights[..d].to_vec())
            .collect();
        let out = refine_weights(matrix, lambda, &moments, &initial, cfg.max_shift)?;
        if out.accepted {
            for (l, w) in result.links.iter_mut().zip(&out.weights) {
                let mut full = w.clone();
                full.push(1.0 - w.iter().sum::<f64>());
                l.matched = Some(std::mem::replace(&mut l.weights, full));
            }
            if let Some(t) = truth {
                let est: Vec<Vec<f64>> = result.links.iter().map(|l| l.weights.clone()).collect();
                result.error_norm = Some(error_norm(&est, t));
            }
        }
        let better = match &best {
            None => true,
            Some((_, b)) => out.final_cost < b.final_cost,
        };
        if better {
            best = Some((result, out));
        }
    }
    let (result, out) = best.expect("at least the consensus candidate");
    Ok(gh_report(lambda, source, cfg, per_path, result, Some(out)))
}

fn gh_report(
    lambda: &[f64],
    source: MgfSource<'_>,
    cfg: &PipelineConfig,
    per_path: Vec<GhPath>,
    result: MatchResult,
    refinement: Option<RefineOutcome>,
) -> EstimateReport {
    EstimateReport {
        model: ModelKind::Gh,
        rates: lambda.to_vec(),
        seed: cfg.seed,
        exact_mgf: !matches!(source, MgfSource::Samples(_)),
        delta_policy: delta_label(&cfg.matching.delta),
        paths: per_path.into_iter().map(|p| p.report).collect(),
        result,
        refinement,
    }
}

fn wrap(e: Error, path: usize) -> Error {
    match e {
        Error::Path { .. } => e,
        other => other.at_path(path + 1),
    }
}

/// Exponential means for every link.
pub fn estimate_means(
    matrix: &RoutingMatrix,
    source: MgfSource<'_>,
    cfg: &PipelineConfig,
    truth: Option<&[f64]>,
) -> Result<EstimateReport> {
    if let MgfSource::ExactMeans(m) = source {
        if m.len() != matrix.num_links() {
            return Err(Error::Dimension(format!(
                "{} link means for {} links",
                m.len(),
                matrix.num_links()
            )));
        }
    }
    let per_path: Vec<(PathReport, Vec<f64>)> = (0..matrix.num_paths())
        .into_par_iter()
        .map(|i| means_path(matrix, source, cfg, i).map_err(|e| wrap(e, i)))
        .collect::<Result<Vec<_>>>()?;
    let (paths, sets): (Vec<PathReport>, Vec<Vec<f64>>) = per_path.into_iter().unzip();
    let result = crate::expmeans::match_means(&sets, matrix, &cfg.matching, truth)?;
    Ok(EstimateReport {
        model: ModelKind::Exp,
        rates: Vec::new(),
        seed: cfg.seed,
        exact_mgf: !matches!(source, MgfSource::Samples(_)),
        delta_policy: delta_label(&cfg.matching.delta),
        paths,
        result,
        refinement: None,
    })
}

fn means_path(
    matrix: &RoutingMatrix,
    source: MgfSource<'_>,
    cfg: &PipelineConfig,
    path: usize,
) -> Result<(PathReport, Vec<f64>)> {
    let links = matrix.path_links(path);
    let n = links.len();
    let (mgf_at, mean_delay, count): (Box<dyn Fn(f64) -> Result<f64>>, f64, Option<usize>) =
        match source {
            MgfSource::Samples(s) => {
                let ys = path_samples(s, path)?;
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                (Box::new(move |t| empirical_mgf(ys, t)), mean, Some(ys.len()))
            }
            MgfSource::ExactMeans(means) => {
                let on_path: Vec<f64> = links.iter().map(|&j| means[j]).collect();
                let mean = on_path.iter().sum();
                (
                    Box::new(move |t| Ok(on_path.iter().map(|m| 1.0 / (1.0 + m * t)).product())),
                    mean,
                    None,
                )
            }
            MgfSource::ExactGh(_) => {
                return Err(Error::Domain(
                    "GH distributions cannot drive the exponential model".into(),
                ))
            }
        };
    let tau = match explicit_tau(&cfg.tau, path, n)? {
        Some(t) => t,
        None => default_tau(n, mean_delay)?,
    };
    let mgf = tau.iter().map(|&t| mgf_at(t)).collect::<Result<Vec<_>>>()?;
    let sys = build_mean_system(&mgf, &tau)?;
    let sol = solve_means(&sys)?;
    let condition = linalg::condition_number(&sys.vandermonde);
    let report = PathReport {
        path_id: path + 1,
        links: links.iter().map(|j| j + 1).collect(),
        tau,
        mgf_hat: mgf,
        rhs: sys.esp.clone(),
        condition: Some(condition),
        samples: count,
        roots_found: sol.means.len(),
        real_roots: if sol.complex { 0 } else { sol.means.len() },
        reduced: sol.means.iter().map(|&m| vec![m]).collect(),
        warnings: sol.warnings,
    };
    Ok((report, sol.means))
}
