//! Joint refinement of matched link weights.
//!
//! Starting from the matched estimate, all reduced weight vectors are fitted
//! at once to the MGF estimates of every path by covariance-weighted least
//! squares, using damped Gauss–Newton steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::epsbuild::WHITENING_FLOOR;
use crate::linalg;
use crate::mgfest::MgfMoments;
use crate::model::{validate_rates, RoutingMatrix};
use crate::{Error, Result};

/// Largest move from the matched estimate that is still accepted.
pub const DEFAULT_MAX_SHIFT: f64 = 0.5;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    /// Reduced (`d`-dimensional) weights per link.
    pub weights: Vec<Vec<f64>>,
    /// Half the squared norm of the whitened residuals, before and after.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// False when the refined point was rejected and the input kept.
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

struct PathTerms {
    links: Vec<usize>,
    mgf: Vec<f64>,
    /// `φ_k(t) − φ_{d+1}(t)` per point, `k < d`, with `φ_k(t) = λ_k/(λ_k+t)`.
    diff: Vec<Vec<f64>>,
    /// `φ_{d+1}(t)` per point.
    base: Vec<f64>,
    whitener: DMatrix<f64>,
}

struct Problem {
    paths: Vec<PathTerms>,
    d: usize,
    rows: usize,
    cols: usize,
}

impl Problem {
    fn link_mgf(&self, p: &PathTerms, x: &[f64], j: usize, point: usize) -> f64 {
        let mut m = p.base[point];
        for k in 0..self.d {
            m += x[j * self.d + k] * p.diff[point][k];
        }
        m
    }

    fn residuals(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        let mut row = 0;
        for p in &self.paths {
            let k = p.mgf.len();
            let raw = DVector::from_fn(k, |t, _| {
                let f: f64 = p.links.iter().map(|&j| self.link_mgf(p, x, j, t)).product();
                f - p.mgf[t]
            });
            out.rows_mut(row, k).copy_from(&(&p.whitener * raw));
            row += k;
        }
        out
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        let mut row = 0;
        for p in &self.paths {
            let k = p.mgf.len();
            let mut raw = DMatrix::zeros(k, self.cols);
            for t in 0..k {
                let m: Vec<f64> = p.links.iter().map(|&j| self.link_mgf(p, x, j, t)).collect();
                for (a, &j) in p.links.iter().enumerate() {
                    let others: f64 = m
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| *b != a)
                        .map(|(_, v)| v)
                        .product();
                    for s in 0..self.d {
                        raw[(t, j * self.d + s)] = others * p.diff[t][s];
                    }
                }
            }
            out.rows_mut(row, k).copy_from(&(&p.whitener * raw));
            row += k;
        }
        out
    }
}

fn cost(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Refines `initial` (reduced weights per link) against `moments` (one entry
/// per path, in path order, with sample covariance).
pub fn refine_weights(
    matrix: &RoutingMatrix,
    lambda: &[f64],
    moments: &[MgfMoments],
    initial: &[Vec<f64>],
    max_shift: f64,
) -> Result<RefineOutcome> {
    validate_rates(lambda)?;
    let d = lambda.len() - 1;
    if d == 0 {
        return Err(Error::Domain("nothing to refine with a single rate".into()));
    }
    if moments.len() != matrix.num_paths() || initial.len() != matrix.num_links() {
        return Err(Error::Dimension(format!(
            "refinement needs {} paths and {} links, got {} and {}",
            matrix.num_paths(),
            matrix.num_links(),
            moments.len(),
            initial.len()
        )));
    }
    if let Some(w) = initial.iter().find(|w| w.len() != d) {
        return Err(Error::Dimension(format!(
            "weight vector of length {} for {d} free weights",
            w.len()
        )));
    }
    let last = lambda[d];
    let mut paths = Vec::with_capacity(moments.len());
    let mut rows = 0;
    for (i, m) in moments.iter().enumerate() {
        let cov = m
            .cov
            .as_ref()
            .ok_or_else(|| Error::Domain(format!("path {} has no sample covariance", i + 1)))?;
        let base: Vec<f64> = m.tau.iter().map(|&t| last / (last + t)).collect();
        let diff = m
            .tau
            .iter()
            .zip(&base)
            .map(|(&t, b)| (0..d).map(|k| lambda[k] / (lambda[k] + t) - b).collect())
            .collect();
        rows += m.tau.len();
        paths.push(PathTerms {
            links: matrix.path_links(i),
            mgf: m.mgf.clone(),
            diff,
            base,
            whitener: linalg::whitening(cov, WHITENING_FLOOR),
        });
    }
    let cols = initial.len() * d;
    let problem = Problem {
        paths,
        d,
        rows,
        cols,
    };
    let x0: Vec<f64> = initial.iter().flatten().copied().collect();
    let mut x = x0.clone();
    let mut r = problem.residuals(&x);
    let initial_cost = cost(&r);
    let mut mu = 1e-6;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let j = problem.jacobian(&x);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let scale = (0..cols).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut moved = None;
        while mu < 1e12 {
            let m = &jtj + DMatrix::identity(cols, cols) * (mu * scale);
            if let Some(step) = m.cholesky().map(|c| -c.solve(&g)) {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let rt = problem.residuals(&trial);
                if cost(&rt) < cost(&r) {
                    moved = Some((trial, rt, step.amax()));
                    mu = (mu * 0.1).max(1e-12);
                    break;
                }
            }
            mu *= 10.0;
        }
        let Some((trial, rt, size)) = moved else {
            break;
        };
        let gain = cost(&r) - cost(&rt);
        x = trial;
        r = rt;
        if size < 1e-12 || gain < 1e-14 * (1.0 + cost(&r)) {
            break;
        }
    }
    let final_cost = cost(&r);
    let shift = x
        .iter()
        .zip(&x0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let weights: Vec<Vec<f64>> = x.chunks(d).map(<[f64]>::to_vec).collect();
    let (weights, accepted, note) = if !x.iter().all(|v| v.is_finite()) {
        (initial.to_vec(), false, Some("refinement diverged".to_string()))
    } else if shift > max_shift {
        (
            initial.to_vec(),
            false,
            Some(format!("refinement moved a weight by {shift:.3}; matched values kept")),
        )
    } else {
        (weights, true, None)
    };
    Ok(RefineOutcome {
        weights,
        initial_cost,
        final_cost,
        iterations,
        accepted,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgfest::{default_grid, mgf_moments};
    use crate::model::GhMix;
    use crate::simulate::sample_paths;

    fn setup(l: usize, seed: u64) -> (RoutingMatrix, [f64; 3], [[f64; 3]; 3], Vec<MgfMoments>) {
        let lambda = [5.0, 3.0, 1.0];
        let matrix = RoutingMatrix::new(vec![vec![1, 1, 0], vec![1, 0, 1]]).unwrap();
        let truth = [[0.17, 0.80, 0.03], [0.13, 0.47, 0.40], [0.80, 0.15, 0.05]];
        let mixes: Vec<GhMix> = truth
            .iter()
            .map(|w| GhMix::new(lambda.to_vec(), w.to_vec()).unwrap())
            .collect();
        let set = sample_paths(&matrix, &mixes, l, seed).unwrap();
        let grid = default_grid(2, &lambda);
        let moments = set
            .paths
            .iter()
            .map(|p| mgf_moments(&p.values, &grid).unwrap())
            .collect();
        (matrix, lambda, truth, moments)
    }

    #[test]
    fn refinement_pulls_perturbed_start_back() {
        let (matrix, lambda, truth, moments) = setup(200_000, 3);
        let start: Vec<Vec<f64>> = truth.iter().map(|w| vec![w[0] + 0.04, w[1] - 0.04]).collect();
        let out = refine_weights(&matrix, &lambda, &moments, &start, DEFAULT_MAX_SHIFT).unwrap();
        assert!(out.accepted);
        assert!(out.final_cost < out.initial_cost);
        let err: f64 = out
            .weights
            .iter()
            .zip(&truth)
            .flat_map(|(e, t)| e.iter().zip(t).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        assert!(err < 0.04, "max error {err}");
    }

    #[test]
    fn large_moves_are_rejected() {
        let (matrix, lambda, truth, moments) = setup(50_000, 5);
        let start: Vec<Vec<f64>> = truth.iter().map(|w| vec![w[0] + 0.04, w[1] - 0.04]).collect();
        let out = refine_weights(&matrix, &lambda, &moments, &start, 1e-6).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.weights, start);
    }

    #[test]
    fn exact_moments_need_covariance() {
        let (matrix, lambda, truth, mut moments) = setup(1_000, 1);
        moments[0].cov = None;
        let start: Vec<Vec<f64>> = truth.iter().map(|w| w[..2].to_vec()).collect();
        assert!(refine_weights(&matrix, &lambda, &moments, &start, 0.5).is_err());
    }
}
