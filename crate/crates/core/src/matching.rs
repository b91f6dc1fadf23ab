//! Assignment of weight vectors to links from per-path solution sets.
//!
//! Points from all reduced sets are grouped into classes (two points from
//! different paths are related when closer than `2δ`). A link on two or more paths takes the
//! class present in every path through it and in no other path. A link on a
//! single path is recovered from a root of that path whose other blocks are
//! already assigned.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{GhMix, IncidenceSets, RoutingMatrix};
use crate::{Error, Result};

/// Radius of the clustering relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaPolicy {
    Fixed(f64),
    /// Smallest radius, from a ladder over cross-path distances, for which
    /// the relation is transitive and every link gets a unique class.
    Auto,
}

#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub delta: DeltaPolicy,
    /// Factor applied to a fixed δ when the relation is not transitive.
    pub shrink: f64,
    pub max_retries: usize,
    /// Longest δ ladder tried in auto mode.
    pub max_ladder: usize,
    /// Tolerance for locating a root block among the reduced points.
    pub member_tol: f64,
    /// Record failed links as unmatched instead of returning an error.
    pub strict: bool,
    /// GH rates of the estimates. When set, auto mode skips rungs whose
    /// assignment contains a weight vector with a negative density, unless
    /// no rung gives a valid one.
    pub rates: Option<Vec<f64>>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            delta: DeltaPolicy::Auto,
            shrink: 0.5,
            max_retries: 30,
            max_ladder: 400,
            member_tol: 1e-6,
            strict: true,
            rates: None,
        }
    }
}

impl MatchConfig {
    pub fn fixed(delta: f64) -> Self {
        MatchConfig {
            delta: DeltaPolicy::Fixed(delta),
            ..Self::default()
        }
    }
}

/// Real solutions of one path system.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSolutions {
    /// 0-based path index.
    pub path: usize,
    /// Distinct first blocks of the roots.
    pub reduced: Vec<Vec<f64>>,
    /// Full roots, `N_i` blocks of `d` coordinates each.
    pub roots: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    /// 0-based path index.
    pub path: usize,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Class {
    pub members: Vec<Member>,
}

impl Class {
    pub fn paths(&self) -> BTreeSet<usize> {
        self.members.iter().map(|m| m.path).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.members[0].point.len();
        let mut out = vec![0.0; d];
        for m in &self.members {
            for (o, v) in out.iter_mut().zip(&m.point) {
                *o += v;
            }
        }
        let k = self.members.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub classes: Vec<Class>,
    /// Radius actually used.
    pub delta: f64,
    pub retries: usize,
}

impl Clustering {
    /// Class holding a member of `path` within `tol` of `point`.
    pub fn class_of(&self, path: usize, point: &[f64], tol: f64) -> Option<usize> {
        self.classes.iter().position(|c| {
            c.members
                .iter()
                .any(|m| m.path == path && dist(&m.point, point) < tol)
        })
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Points of the same path are distinct solutions and never related.
fn related(a: &Member, b: &Member, delta: f64) -> bool {
    a.path != b.path && dist(&a.point, &b.point) < 2.0 * delta
}

/// Components of the `< 2δ` graph, or the pairs breaking transitivity.
fn components(points: &[Member], delta: f64) -> std::result::Result<Vec<Class>, Vec<(usize, usize)>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if related(&points[i], &points[j], delta) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut bad = Vec::new();
    for g in groups.values() {
        for (a, &i) in g.iter().enumerate() {
            for &j in &g[a + 1..] {
                if !related(&points[i], &points[j], delta) {
                    bad.push((i, j));
                }
            }
        }
    }
    if !bad.is_empty() {
        return Err(bad);
    }
    let mut classes: Vec<Class> = groups
        .into_values()
        .map(|g| {
            let mut members: Vec<Member> = g.into_iter().map(|i| points[i].clone()).collect();
            members.sort_by(|a, b| a.path.cmp(&b.path).then(lex(&a.point, &b.point)));
            Class { members }
        })
        .collect();
    classes.sort_by(|a, b| {
        let ma = a.members.iter().min_by(|x, y| lex(&x.point, &y.point)).unwrap();
        let mb = b.members.iter().min_by(|x, y| lex(&x.point, &y.point)).unwrap();
        lex(&ma.point, &mb.point)
    });
    Ok(classes)
}

/// Partition of `points` under `α ∼ β ⇔ ‖α − β‖ < 2δ` (points from different
/// paths only); δ is multiplied by `shrink` until the relation is
/// transitive.
pub fn cluster(points: &[Member], delta: f64, shrink: f64, max_retries: usize) -> Result<Clustering> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("clustering radius must be positive, got {delta}")));
    }
    let mut delta = delta;
    let mut retries = 0;
    loop {
        match components(points, delta) {
            Ok(classes) => {
                return Ok(Clustering {
                    classes,
                    delta,
                    retries,
                })
            }
            Err(pairs) => {
                if retries == max_retries {
                    return Err(Error::Clustering { retries, pairs });
                }
                retries += 1;
                delta *= shrink;
            }
        }
    }
}

/// How a link got its value.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkAssignment {
    /// Class index in the clustering.
    pub class: usize,
    pub value: Vec<f64>,
    pub stage: u8,
}

/// Links that the intersection rule applies to: every link on two or more
/// paths.
pub fn psi_stage1(
    clustering: &Clustering,
    sets: &IncidenceSets,
    links: &[usize],
) -> Result<BTreeMap<usize, LinkAssignment>> {
    let mut out = BTreeMap::new();
    for &j in links {
        let covering: BTreeSet<usize> = sets.covering[j].iter().copied().collect();
        let candidates: Vec<usize> = clustering
            .classes
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let p = c.paths();
                covering.is_subset(&p) && sets.avoiding[j].iter().all(|b| !p.contains(b))
            })
            .map(|(i, _)| i)
            .collect();
        if candidates.len() != 1 {
            return Err(Error::Ambiguous {
                link: j + 1,
                candidates: candidates.len(),
            });
        }
        let class = candidates[0];
        out.insert(
            j,
            LinkAssignment {
                class,
                value: clustering.classes[class].mean(),
                stage: 1,
            },
        );
    }
    Ok(out)
}

/// Recovers the link `j` lying on the single path `i`, given assignments for
/// the other links on `i`.
pub fn psi_stage2(
    clustering: &Clustering,
    assigned: &BTreeMap<usize, LinkAssignment>,
    solutions: &PathSolutions,
    sets: &IncidenceSets,
    j: usize,
    d: usize,
    member_tol: f64,
) -> Result<LinkAssignment> {
    let i = solutions.path;
    let others: Vec<usize> = sets.paths[i].iter().copied().filter(|&k| k != j).collect();
    let fail = |reason: String| Error::MatchFailure { link: j + 1, reason };
    if others.is_empty() {
        if solutions.reduced.len() != 1 {
            return Err(fail(format!(
                "single-link path {} has {} real solutions",
                i + 1,
                solutions.reduced.len()
            )));
        }
        let value = solutions.reduced[0].clone();
        let class = clustering
            .class_of(i, &value, member_tol)
            .ok_or_else(|| fail("solution missing from clustering".into()))?;
        return Ok(LinkAssignment {
            class,
            value,
            stage: 2,
        });
    }
    let mut wanted = Vec::with_capacity(others.len());
    for k in &others {
        let a = assigned
            .get(k)
            .ok_or_else(|| fail(format!("link {} on path {} is unassigned", k + 1, i + 1)))?;
        wanted.push(a.class);
    }
    wanted.sort_unstable();

    let mut found: Vec<(usize, Vec<f64>)> = Vec::new();
    for root in &solutions.roots {
        let blocks: Vec<&[f64]> = root.chunks(d).collect();
        let classes: Vec<Option<usize>> = blocks
            .iter()
            .map(|b| clustering.class_of(i, b, member_tol))
            .collect();
        for free in 0..blocks.len() {
            let Some(free_class) = classes[free] else {
                continue;
            };
            let mut rest: Vec<usize> = Vec::with_capacity(others.len());
            let mut complete = true;
            for (b, c) in classes.iter().enumerate() {
                if b != free {
                    match c {
                        Some(c) => rest.push(*c),
                        None => complete = false,
                    }
                }
            }
            rest.sort_unstable();
            if complete && rest == wanted && !found.iter().any(|(c, _)| *c == free_class) {
                found.push((free_class, blocks[free].to_vec()));
            }
        }
    }
    match found.len() {
        0 => Err(fail(format!(
            "no root of path {} is compatible with the assigned links",
            i + 1
        ))),
        1 => {
            let (class, value) = found.pop().unwrap();
            Ok(LinkAssignment {
                class,
                value,
                stage: 2,
            })
        }
        n => Err(Error::Ambiguous {
            link: j + 1,
            candidates: n,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// 1-based ids of the paths contributing class members.
    pub paths: Vec<usize>,
    pub class_members: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEstimate {
    /// 1-based.
    pub link_id: usize,
    /// All `d + 1` weights (empty for the exponential model).
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    pub stage: u8,
    /// Matched weights before joint refinement, when refinement changed them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<Vec<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedLink {
    pub link_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub links: Vec<LinkEstimate>,
    pub unmatched: Vec<UnmatchedLink>,
    pub delta: f64,
    pub delta_retries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_norm: Option<f64>,
    /// Set when the links come from [`consensus_match`] rather than the
    /// clustering rule.
    #[serde(default)]
    pub consensus: bool,
}

impl MatchResult {
    /// Weight vectors in link order; `None` for unmatched links.
    pub fn weights(&self, num_links: usize) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; num_links];
        for l in &self.links {
            out[l.link_id - 1] = Some(l.weights.clone());
        }
        out
    }
}

/// Euclidean norm of the concatenated differences over all links.
pub fn error_norm(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    estimate
        .iter()
        .zip(truth)
        .flat_map(|(e, t)| e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        .sqrt()
}

fn provenance(class: &Class) -> Provenance {
    Provenance {
        paths: class.paths().into_iter().map(|p| p + 1).collect(),
        class_members: class.members.clone(),
    }
}

/// Completes each assigned `d`-vector with `1 − Σ` and attaches the error
/// norm against `truth` (full `d + 1` vectors) when given.
pub fn finalize(
    clustering: &Clustering,
    assignment: &BTreeMap<usize, LinkAssignment>,
    unmatched: Vec<UnmatchedLink>,
    truth: Option<&[Vec<f64>]>,
) -> MatchResult {
    let links: Vec<LinkEstimate> = assignment
        .iter()
        .map(|(&j, a)| {
            let mut weights = a.value.clone();
            weights.push(1.0 - a.value.iter().sum::<f64>());
            LinkEstimate {
                link_id: j + 1,
                weights,
                mean: None,
                stage: a.stage,
                matched: None,
                provenance: provenance(&clustering.classes[a.class]),
            }
        })
        .collect();
    let error_norm = truth.filter(|_| unmatched.is_empty()).map(|t| {
        let est: Vec<Vec<f64>> = links.iter().map(|l| l.weights.clone()).collect();
        error_norm(&est, t)
    });
    MatchResult {
        links,
        unmatched,
        delta: clustering.delta,
        delta_retries: clustering.retries,
        error_norm,
        consensus: false,
    }
}

fn members_of(solutions: &[PathSolutions]) -> Vec<Member> {
    solutions
        .iter()
        .flat_map(|s| {
            s.reduced.iter().map(move |p| Member {
                path: s.path,
                point: p.clone(),
            })
        })
        .collect()
}

/// Radii for the auto policy: `2δ` halfway between consecutive distinct
/// distances of points from different paths, smallest first. Without any
/// such pair the radius has no effect and a single nominal rung of 1 is
/// returned.
pub fn delta_ladder(points: &[Member], max_len: usize) -> Vec<f64> {
    let mut ds: Vec<f64> = Vec::new();
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if a.path != b.path {
                ds.push(dist(&a.point, &b.point));
            }
        }
    }
    if ds.is_empty() {
        return vec![1.0];
    }
    ds.sort_by(f64::total_cmp);
    ds.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    ds.iter()
        .enumerate()
        .take(max_len)
        .map(|(k, &v)| {
            let two_delta = match ds.get(k + 1) {
                Some(&next) => 0.5 * (v + next),
                None => 1.01 * v,
            };
            0.5 * two_delta
        })
        .filter(|&delta| delta > 0.0)
        .collect()
}

type Attempt = (Clustering, BTreeMap<usize, LinkAssignment>, Vec<UnmatchedLink>);

fn assign_all(
    clustering: Clustering,
    solutions: &[PathSolutions],
    sets: &IncidenceSets,
    d: usize,
    cfg: &MatchConfig,
) -> Result<Attempt> {
    let num_links = sets.covering.len();
    let mut unmatched = Vec::new();
    let mut assigned = BTreeMap::new();
    for &j in &sets.shared {
        match psi_stage1(&clustering, sets, &[j]) {
            Ok(a) => assigned.extend(a),
            Err(e) if !cfg.strict => unmatched.push(UnmatchedLink {
                link_id: j + 1,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let by_path: BTreeMap<usize, &PathSolutions> = solutions.iter().map(|s| (s.path, s)).collect();
    for j in 0..num_links {
        if sets.covering[j].len() != 1 {
            continue;
        }
        let i = sets.covering[j][0];
        let sol = by_path.get(&i).ok_or_else(|| Error::MatchFailure {
            link: j + 1,
            reason: format!("no solutions for path {}", i + 1),
        })?;
        match psi_stage2(&clustering, &assigned, sol, sets, j, d, cfg.member_tol) {
            Ok(a) => {
                assigned.insert(j, a);
            }
            Err(e) if !cfg.strict => unmatched.push(UnmatchedLink {
                link_id: j + 1,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    unmatched.sort_by_key(|u| u.link_id);
    Ok((clustering, assigned, unmatched))
}

/// Full matching step: clustering plus both assignment stages.
pub fn match_links(
    solutions: &[PathSolutions],
    matrix: &RoutingMatrix,
    d: usize,
    cfg: &MatchConfig,
    truth: Option<&[Vec<f64>]>,
) -> Result<MatchResult> {
    let sets = matrix.incidence_sets();
    let points = members_of(solutions);
    let (clustering, assigned, unmatched) = match cfg.delta {
        DeltaPolicy::Fixed(delta) => {
            let c = cluster(&points, delta, cfg.shrink, cfg.max_retries)?;
            assign_all(c, solutions, &sets, d, cfg)?
        }
        DeltaPolicy::Auto => auto_match(&points, solutions, &sets, d, cfg)?,
    };
    Ok(finalize(&clustering, &assigned, unmatched, truth))
}

fn admissible(assigned: &BTreeMap<usize, LinkAssignment>, rates: Option<&[f64]>) -> bool {
    let Some(rates) = rates else {
        return true;
    };
    assigned
        .values()
        .all(|a| GhMix::from_reduced(rates.to_vec(), &a.value).is_ok())
}

fn auto_match(
    points: &[Member],
    solutions: &[PathSolutions],
    sets: &IncidenceSets,
    d: usize,
    cfg: &MatchConfig,
) -> Result<Attempt> {
    let strict = MatchConfig {
        strict: true,
        ..cfg.clone()
    };
    let mut first_err = None;
    let mut first_ok = None;
    for delta in delta_ladder(points, cfg.max_ladder) {
        let Ok(classes) = components(points, delta) else {
            continue;
        };
        let c = Clustering {
            classes,
            delta,
            retries: 0,
        };
        match assign_all(c, solutions, sets, d, &strict) {
            Ok(a) => {
                if admissible(&a.1, cfg.rates.as_deref()) {
                    return Ok(a);
                }
                first_ok.get_or_insert(a);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(a) = first_ok {
        return Ok(a);
    }
    if !cfg.strict {
        // Fall back to the smallest rung and report what failed.
        if let Some(delta) = delta_ladder(points, 1).first() {
            let c = cluster(points, *delta, cfg.shrink, cfg.max_retries)?;
            return assign_all(c, solutions, sets, d, cfg);
        }
    }
    Err(first_err.unwrap_or_else(|| {
        Error::Domain("no points from different paths to derive a clustering radius".into())
    }))
}

/// Largest number of root combinations searched exhaustively by
/// [`consensus_match`]; larger searches use coordinate descent.
pub const CONSENSUS_EXHAUSTIVE: usize = 1 << 20;

fn spread(choice: &[usize], solutions: &[PathSolutions], matrix: &RoutingMatrix, d: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..matrix.num_links() {
        let blocks: Vec<&[f64]> = matrix
            .link_paths(j)
            .into_iter()
            .map(|i| {
                let pos = matrix.path_links(i).iter().position(|&l| l == j).expect("link on path");
                &solutions[i].roots[choice[i]][pos * d..(pos + 1) * d]
            })
            .collect();
        if blocks.len() < 2 {
            continue;
        }
        let mean: Vec<f64> = (0..d)
            .map(|k| blocks.iter().map(|b| b[k]).sum::<f64>() / blocks.len() as f64)
            .collect();
        total += blocks.iter().map(|b| dist(b, &mean).powi(2)).sum::<f64>();
    }
    total
}

/// Picks one root per path so that the blocks of every shared link agree as
/// closely as possible (least total squared spread), and averages them.
/// `solutions[i]` must belong to path `i`. Meant as a starting point for
/// joint refinement when the clustering rule cannot assign every link.
pub fn consensus_match(
    solutions: &[PathSolutions],
    matrix: &RoutingMatrix,
    d: usize,
    truth: Option<&[Vec<f64>]>,
) -> Result<MatchResult> {
    if solutions.len() != matrix.num_paths()
        || solutions.iter().enumerate().any(|(i, s)| s.path != i)
    {
        return Err(Error::Dimension("one solution set per path, in path order".into()));
    }
    if let Some(s) = solutions.iter().find(|s| s.roots.is_empty()) {
        return Err(Error::MatchFailure {
            link: matrix.path_links(s.path)[0] + 1,
            reason: format!("path {} has no roots", s.path + 1),
        });
    }
    let sizes: Vec<usize> = solutions.iter().map(|s| s.roots.len()).collect();
    let total = sizes
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    let mut best = vec![0; sizes.len()];
    let mut best_cost = f64::INFINITY;
    if total <= CONSENSUS_EXHAUSTIVE {
        let mut choice = vec![0; sizes.len()];
        loop {
            let c = spread(&choice, solutions, matrix, d);
            if c < best_cost {
                best_cost = c;
                best.clone_from(&choice);
            }
            let mut i = 0;
            while i < choice.len() {
                choice[i] += 1;
                if choice[i] < sizes[i] {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == choice.len() {
                break;
            }
        }
    } else {
        // One descent per root of the first path.
        for start in 0..sizes[0] {
            let mut choice = vec![0; sizes.len()];
            choice[0] = start;
            let mut cost = spread(&choice, solutions, matrix, d);
            loop {
                let before = cost;
                for i in 0..choice.len() {
                    for r in 0..sizes[i] {
                        let old = choice[i];
                        choice[i] = r;
                        let c = spread(&choice, solutions, matrix, d);
                        if c < cost {
                            cost = c;
                        } else {
                            choice[i] = old;
                        }
                    }
                }
                if cost >= before {
                    break;
                }
            }
            if cost < best_cost {
                best_cost = cost;
                best = choice;
            }
        }
    }
    let links: Vec<LinkEstimate> = (0..matrix.num_links())
        .map(|j| {
            let paths = matrix.link_paths(j);
            let members: Vec<Member> = paths
                .iter()
                .map(|&i| {
                    let pos = matrix.path_links(i).iter().position(|&l| l == j).expect("link on path");
                    Member {
                        path: i,
                        point: solutions[i].roots[best[i]][pos * d..(pos + 1) * d].to_vec(),
                    }
                })
                .collect();
            let class = Class { members };
            let mut weights = class.mean();
            weights.push(1.0 - weights.iter().sum::<f64>());
            LinkEstimate {
                link_id: j + 1,
                weights,
                mean: None,
                stage: if paths.len() > 1 { 1 } else { 2 },
                matched: None,
                provenance: provenance(&class),
            }
        })
        .collect();
    let error_norm = truth.map(|t| {
        let est: Vec<Vec<f64>> = links.iter().map(|l| l.weights.clone()).collect();
        error_norm(&est, t)
    });
    Ok(MatchResult {
        links,
        unmatched: Vec::new(),
        delta: 0.0,
        delta_retries: 0,
        error_norm,
        consensus: true,
    })
}
