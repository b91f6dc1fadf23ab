//! Link delay model: generalized hyperexponential (GH) mixtures over a shared
//! set of exponential rates, and binary routing matrices.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance on `Σ w_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Lowest density value accepted on the validation grid.
pub const DENSITY_FLOOR: f64 = -1e-9;
const DENSITY_GRID_POINTS: usize = 1000;

/// One link's delay distribution:
/// `F(u) = Σ_k w_k (1 - exp(-λ_k u))`, the last rate playing the role of the
/// reference stage whose weight is `1 - Σ_{k<d+1} w_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GhMix {
    rates: Vec<f64>,
    weights: Vec<f64>,
}

impl GhMix {
    pub fn new(rates: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate_rates(&rates)?;
        if weights.len() != rates.len() {
            return Err(Error::InvalidMix(format!(
                "{} weights for {} rates",
                weights.len(),
                rates.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidMix("non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMix(format!("weights sum to {total}, not 1")));
        }
        let mix = GhMix { rates, weights };
        mix.check_density()?;
        Ok(mix)
    }

    /// Builds a mix from the `d` free weights, filling in the last one.
    pub fn from_reduced(rates: Vec<f64>, reduced: &[f64]) -> Result<Self> {
        if reduced.len() + 1 != rates.len() {
            return Err(Error::InvalidMix(format!(
                "{} free weights for {} rates",
                reduced.len(),
                rates.len()
            )));
        }
        let mut weights = reduced.to_vec();
        weights.push(1.0 - reduced.iter().sum::<f64>());
        GhMix::new(rates, weights)
    }

    /// A single exponential stage with the given rate.
    pub fn exponential(rate: f64) -> Result<Self> {
        GhMix::new(vec![rate], vec![1.0])
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of free weights (`d`); the mix has `d + 1` stages.
    pub fn free_dim(&self) -> usize {
        self.rates.len() - 1
    }

    /// The first `d` weights, i.e. the coordinates the estimator works in.
    pub fn reduced_weights(&self) -> &[f64] {
        &self.weights[..self.free_dim()]
    }

    /// True when every weight is nonnegative (a proper hyperexponential).
    pub fn is_hyperexponential(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
    }

    /// Moment generating function `E[exp(-tX)] = Σ w_k λ_k / (λ_k + t)`.
    pub fn mgf(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("mgf argument must be >= 0, got {t}")));
        }
        Ok(self.mgf_unchecked(t))
    }

    pub(crate) fn mgf_unchecked(&self, t: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| w * l / (l + t))
            .sum()
    }

    pub fn cdf(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("cdf argument must be >= 0, got {u}")));
        }
        Ok(self.cdf_unchecked(u))
    }

    pub(crate) fn cdf_unchecked(&self, u: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| w * -(-l * u).exp_m1())
            .sum()
    }

    pub fn density(&self, u: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| w * l * (-l * u).exp())
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| w / l)
            .sum()
    }

    // Grid check over [1e-4/λ_max, 20/λ_min] plus the sign of the slowest
    // stage with nonzero weight, which dominates the tail.
    fn check_density(&self) -> Result<()> {
        if self.is_hyperexponential() {
            return Ok(());
        }
        let lmin = self.rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let lmax = self.rates.iter().cloned().fold(0.0, f64::max);
        let lo = (1e-4 / lmax).ln();
        let hi = (20.0 / lmin).ln();
        for i in 0..DENSITY_GRID_POINTS {
            let u = (lo + (hi - lo) * i as f64 / (DENSITY_GRID_POINTS - 1) as f64).exp();
            let f = self.density(u);
            if f < DENSITY_FLOOR {
                return Err(Error::InvalidMix(format!(
                    "density is negative ({f:.3e}) at u = {u:.4e}"
                )));
            }
        }
        if self.density(0.0) < DENSITY_FLOOR {
            return Err(Error::InvalidMix("density is negative at u = 0".into()));
        }
        let tail = self
            .rates
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| w.abs() > 1e-15)
            .min_by(|a, b| a.0.total_cmp(b.0));
        if let Some((_, &w)) = tail {
            if w < 0.0 {
                return Err(Error::InvalidMix(
                    "slowest stage has a negative weight; density is negative in the tail".into(),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::InvalidMix("no rates".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::InvalidMix(format!("rate {r} is not strictly positive")));
    }
    for i in 0..rates.len() {
        for j in i + 1..rates.len() {
            if rates[i] == rates[j] {
                return Err(Error::InvalidMix(format!(
                    "rates {} and {} coincide ({})",
                    i + 1,
                    j + 1,
                    rates[i]
                )));
            }
        }
    }
    Ok(())
}

/// Reason a routing matrix fails 1-identifiability. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentifiabilityViolation {
    ZeroColumn(usize),
    DuplicateColumns(usize, usize),
}

/// The index sets used by the matching rule, all 0-based:
/// `paths[i]` = links on path i, `covering[j]` = paths through link j,
/// `avoiding[j]` = the remaining paths, `shared` = links on two or more paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceSets {
    pub paths: Vec<Vec<usize>>,
    pub covering: Vec<Vec<usize>>,
    pub avoiding: Vec<Vec<usize>>,
    pub shared: Vec<usize>,
}

/// Binary path/link incidence matrix (`m` paths × `N` links).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingMatrix {
    rows: Vec<Vec<u8>>,
    links: usize,
}

impl RoutingMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        let links = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || links == 0 {
            return Err(Error::InvalidMatrix("matrix is empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != links {
                return Err(Error::InvalidMatrix(format!(
                    "row {} has {} entries, expected {links}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidMatrix(format!(
                    "row {} contains non-binary entry {v}",
                    i + 1
                )));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::InvalidMatrix(format!(
                    "path {} crosses no link",
                    i + 1
                )));
            }
        }
        Ok(RoutingMatrix { rows, links })
    }

    pub fn num_paths(&self) -> usize {
        self.rows.len()
    }

    pub fn num_links(&self) -> usize {
        self.links
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn contains(&self, path: usize, link: usize) -> bool {
        self.rows[path][link] == 1
    }

    pub fn path_links(&self, path: usize) -> Vec<usize> {
        (0..self.links).filter(|&j| self.contains(path, j)).collect()
    }

    pub fn link_paths(&self, link: usize) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.contains(i, link))
            .collect()
    }

    pub fn column(&self, link: usize) -> Vec<u8> {
        self.rows.iter().map(|r| r[link]).collect()
    }

    pub fn incidence_sets(&self) -> IncidenceSets {
        let paths = (0..self.num_paths()).map(|i| self.path_links(i)).collect();
        let covering: Vec<Vec<usize>> = (0..self.links).map(|j| self.link_paths(j)).collect();
        let avoiding = (0..self.links)
            .map(|j| {
                (0..self.num_paths())
                    .filter(|&i| !self.contains(i, j))
                    .collect()
            })
            .collect();
        let shared = (0..self.links)
            .filter(|&j| covering[j].len() >= 2)
            .collect();
        IncidenceSets {
            paths,
            covering,
            avoiding,
            shared,
        }
    }

    /// First violation of pairwise column independence, if any.
    ///
    /// Two binary columns are linearly dependent exactly when one of them is
    /// zero or they are equal, so the check reduces to that.
    pub fn identifiability_violation(&self) -> Option<IdentifiabilityViolation> {
        let cols: Vec<Vec<u8>> = (0..self.links).map(|j| self.column(j)).collect();
        if let Some(j) = cols.iter().position(|c| c.iter().all(|&v| v == 0)) {
            return Some(IdentifiabilityViolation::ZeroColumn(j));
        }
        for j in 0..self.links {
            for k in j + 1..self.links {
                if cols[j] == cols[k] {
                    return Some(IdentifiabilityViolation::DuplicateColumns(j, k));
                }
            }
        }
        None
    }

    pub fn is_one_identifiable(&self) -> bool {
        self.identifiability_violation().is_none()
    }
}

/// Topology file contents.
///
/// ```json
/// { "matrix": [[1,1,0],[1,0,1]],
///   "rates": [5, 3, 1],
///   "links": [[0.17,0.80,0.03], [0.13,0.47,0.40], [0.80,0.15,0.05]],
///   "means": [1, 2, 3] }
/// ```
/// `links` (GH weights, one array of `d+1` per link) and `means`
/// (exponential-link ground truth) are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub matrix: Vec<Vec<u8>>,
    pub rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
}

/// A validated topology.
#[derive(Debug, Clone)]
pub struct Topology {
    pub matrix: RoutingMatrix,
    pub rates: Vec<f64>,
    pub links: Option<Vec<GhMix>>,
    pub means: Option<Vec<f64>>,
}

impl Topology {
    pub fn from_file(file: TopologyFile) -> Result<Self> {
        let matrix = RoutingMatrix::new(file.matrix)?;
        validate_rates(&file.rates)?;
        let links = match file.links {
            Some(ws) => {
                if ws.len() != matrix.num_links() {
                    return Err(Error::Dimension(format!(
                        "{} weight vectors for {} links",
                        ws.len(),
                        matrix.num_links()
                    )));
                }
                let mixes = ws
                    .into_iter()
                    .enumerate()
                    .map(|(j, w)| {
                        GhMix::new(file.rates.clone(), w).map_err(|e| {
                            Error::InvalidMix(format!("link {}: {e}", j + 1))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(mixes)
            }
            None => None,
        };
        if let Some(means) = &file.means {
            if means.len() != matrix.num_links() {
                return Err(Error::Dimension(format!(
                    "{} means for {} links",
                    means.len(),
                    matrix.num_links()
                )));
            }
            if let Some(m) = means.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
                return Err(Error::Domain(format!("mean {m} is not strictly positive")));
            }
        }
        Ok(Topology {
            matrix,
            rates: file.rates,
            links,
            means: file.means,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(text)?;
        Topology::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Topology::from_json(&text)
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            matrix: self.matrix.rows().to_vec(),
            rates: self.rates.clone(),
            links: self
                .links
                .as_ref()
                .map(|ls| ls.iter().map(|m| m.weights().to_vec()).collect()),
            means: self.means.clone(),
        }
    }

    /// Non-fatal problems: a matrix that is not 1-identifiable, or two links
    /// with identical ground-truth parameters.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.matrix.identifiability_violation() {
            Some(IdentifiabilityViolation::ZeroColumn(j)) => {
                out.push(format!("link {} is not covered by any path", j + 1))
            }
            Some(IdentifiabilityViolation::DuplicateColumns(j, k)) => out.push(format!(
                "links {} and {} lie on exactly the same paths",
                j + 1,
                k + 1
            )),
            None => {}
        }
        if let Some(links) = &self.links {
            for (j, k) in duplicate_pairs(links.iter().map(|m| m.weights().to_vec())) {
                out.push(format!(
                    "links {} and {} have identical weight vectors",
                    j + 1,
                    k + 1
                ));
            }
        }
        if let Some(means) = &self.means {
            for (j, k) in duplicate_pairs(means.iter().map(|&m| vec![m])) {
                out.push(format!("links {} and {} have identical means", j + 1, k + 1));
            }
        }
        out
    }
}

fn duplicate_pairs(items: impl Iterator<Item = Vec<f64>>) -> Vec<(usize, usize)> {
    let items: Vec<Vec<f64>> = items.collect();
    let mut pairs = BTreeSet::new();
    for j in 0..items.len() {
        for k in j + 1..items.len() {
            if items[j] == items[k] {
                pairs.insert((j, k));
            }
        }
    }
    pairs.into_iter().collect()
}
