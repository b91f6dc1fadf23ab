//! Isolated complex roots of square polynomial systems.
//!
//! All finite roots are found with a total-degree homotopy, refined with
//! Newton, deduplicated and sorted. Systems built from a path whose links are
//! interchangeable have a root set closed under block permutations; the
//! solver restores that closure for roots missed by path tracking.

mod homotopy;
mod newton;
mod univariate;

use std::cmp::Ordering;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::poly::PolySystem;
use crate::{Error, Result};

use homotopy::{Homotopy, PathEnd, TrackSettings};
pub use newton::{newton_refine, Divergence, Refined, DIVERGENCE_NORM, SINGULAR_RCOND};
pub use univariate::solve_univariate;

/// Fraction of failed paths above which a warning is attached.
pub const FAILURE_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Seeds the gamma constant and the projective patch.
    pub seed: u64,
    /// Relative residual a root must reach after refinement.
    pub residual_tol: f64,
    /// Roots closer than this (max-norm) are merged.
    pub dedup_tol: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub corrector_iters: usize,
    pub corrector_tol: f64,
    pub refine_iters: usize,
    /// Close the root set under block permutations.
    pub symmetrize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            seed: 1,
            residual_tol: 1e-10,
            dedup_tol: 1e-6,
            min_step: 1e-6,
            max_step: 0.1,
            corrector_iters: 3,
            corrector_tol: 1e-8,
            refine_iters: 30,
            symmetrize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Root {
    pub x: Vec<Complex64>,
    pub residual: f64,
    pub suspect: bool,
}

impl Root {
    pub fn max_imag(&self) -> f64 {
        self.x.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.max_imag() < tol
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.x.iter().map(|z| z.re).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SolutionSet {
    /// Finite roots, deduplicated and sorted lexicographically.
    pub roots: Vec<Root>,
    /// First-block components of `roots`, deduplicated and sorted.
    pub reduced: Vec<Vec<Complex64>>,
    pub block: usize,
    pub paths_tracked: usize,
    pub at_infinity: usize,
    pub failures: usize,
    /// Roots found only through block permutation.
    pub added_by_symmetry: usize,
    pub dedup_tol: f64,
    pub warnings: Vec<String>,
}

impl SolutionSet {
    /// Real parts of roots with every imaginary part below `tol`.
    pub fn real_roots(&self, tol: f64) -> Vec<Vec<f64>> {
        self.roots
            .iter()
            .filter(|r| r.is_real(tol))
            .map(Root::real_part)
            .collect()
    }

    pub fn reduced_real(&self, tol: f64) -> Vec<Vec<f64>> {
        self.reduced
            .iter()
            .filter(|v| v.iter().all(|z| z.im.abs() < tol))
            .map(|v| v.iter().map(|z| z.re).collect())
            .collect()
    }

    pub fn dump(&self) -> RootDump {
        RootDump {
            paths_tracked: self.paths_tracked,
            at_infinity: self.at_infinity,
            failures: self.failures,
            added_by_symmetry: self.added_by_symmetry,
            roots: self
                .roots
                .iter()
                .map(|r| RootRecord {
                    re: r.x.iter().map(|z| z.re).collect(),
                    im: r.x.iter().map(|z| z.im).collect(),
                    residual: r.residual,
                    suspect: r.suspect,
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RootRecord {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub residual: f64,
    pub suspect: bool,
}

/// Serializable view of a [`SolutionSet`].
#[derive(Debug, Clone, Serialize)]
pub struct RootDump {
    pub paths_tracked: usize,
    pub at_infinity: usize,
    pub failures: usize,
    pub added_by_symmetry: usize,
    pub roots: Vec<RootRecord>,
    pub warnings: Vec<String>,
}

fn lex_cmp(a: &[Complex64], b: &[Complex64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn max_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn dedup_roots(mut roots: Vec<Root>, tol: f64) -> Vec<Root> {
    roots.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    let mut kept: Vec<Root> = Vec::new();
    for r in roots {
        if !kept.iter().any(|k| max_dist(&k.x, &r.x) < tol) {
            kept.push(r);
        }
    }
    kept.sort_by(|a, b| lex_cmp(&a.x, &b.x));
    kept
}

/// First `block` coordinates of each root, deduplicated within `tol` and
/// sorted lexicographically.
pub fn reduce_first_components(roots: &[Root], block: usize, tol: f64) -> Vec<Vec<Complex64>> {
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    for r in roots {
        let head = &r.x[..block];
        if !out.iter().any(|v| max_dist(v, head) < tol) {
            out.push(head.to_vec());
        }
    }
    out.sort_by(|a, b| lex_cmp(a, b));
    out
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

fn permute_blocks(x: &[Complex64], perm: &[usize], block: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(x.len());
    for &src in perm {
        out.extend_from_slice(&x[src * block..(src + 1) * block]);
    }
    out
}

fn random_gamma(rng: &mut ChaCha8Rng) -> Complex64 {
    let angle: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    Complex64::from_polar(1.0, angle)
}

/// All isolated finite complex roots of `sys`.
pub fn solve_system(sys: &PolySystem, cfg: &SolverConfig) -> Result<SolutionSet> {
    let n = sys.dim();
    if sys.degrees().contains(&0) {
        return Err(Error::Solver(
            "system contains a constant polynomial".into(),
        ));
    }
    let compiled = sys.compile();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = random_gamma(&mut rng);
    let patch: Vec<Complex64> = (0..=n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        })
        .collect();
    let settings = TrackSettings {
        min_step: cfg.min_step,
        max_step: cfg.max_step,
        corrector_iters: cfg.corrector_iters,
        corrector_tol: cfg.corrector_tol,
    };
    let hom = Homotopy::new(&compiled, gamma, patch, settings);
    let total = hom.num_paths();

    enum Outcome {
        Root(Root),
        Infinity,
        Failed,
    }

    let outcomes: Vec<Outcome> = (0..total)
        .into_par_iter()
        .map(|i| match hom.track(hom.start_point(i)) {
            PathEnd::AtInfinity => Outcome::Infinity,
            PathEnd::Failed(_) => Outcome::Failed,
            PathEnd::Finite { x, stalled } => {
                match newton::refine_compiled(sys, &compiled, &x, cfg.residual_tol, cfg.refine_iters)
                {
                    Ok(r) => Outcome::Root(Root {
                        x: r.x,
                        residual: r.residual,
                        suspect: r.suspect || stalled,
                    }),
                    Err(d) if stalled || newton::norm(&d.x) > 1e6 => Outcome::Infinity,
                    Err(_) => Outcome::Failed,
                }
            }
        })
        .collect();

    let mut roots = Vec::new();
    let mut at_infinity = 0;
    let mut failures = 0;
    for o in outcomes {
        match o {
            Outcome::Root(r) => roots.push(r),
            Outcome::Infinity => at_infinity += 1,
            Outcome::Failed => failures += 1,
        }
    }
    if failures == total {
        return Err(Error::Solver(format!("all {total} homotopy paths failed")));
    }
    let mut roots = dedup_roots(roots, cfg.dedup_tol);

    let mut added_by_symmetry = 0;
    let blocks = sys.num_blocks();
    if cfg.symmetrize && blocks > 1 {
        let perms = permutations(blocks);
        let mut extra: Vec<Root> = Vec::new();
        for r in &roots {
            for p in perms.iter().skip(1) {
                let y = permute_blocks(&r.x, p, sys.block);
                let known = roots.iter().chain(&extra).any(|k| max_dist(&k.x, &y) < cfg.dedup_tol);
                if known {
                    continue;
                }
                if let Ok(rf) =
                    newton::refine_compiled(sys, &compiled, &y, cfg.residual_tol, cfg.refine_iters)
                {
                    extra.push(Root {
                        x: rf.x,
                        residual: rf.residual,
                        suspect: rf.suspect,
                    });
                }
            }
        }
        added_by_symmetry = extra.len();
        roots.extend(extra);
        roots = dedup_roots(roots, cfg.dedup_tol);
    }

    let mut warnings = Vec::new();
    if failures as f64 > FAILURE_WARNING_FRACTION * total as f64 {
        warnings.push(format!(
            "{failures} of {total} homotopy paths failed; roots may be missing"
        ));
    }
    let suspect = roots.iter().filter(|r| r.suspect).count();
    if suspect > 0 {
        warnings.push(format!("{suspect} roots have a near-singular Jacobian"));
    }
    let reduced = reduce_first_components(&roots, sys.block, cfg.dedup_tol);
    Ok(SolutionSet {
        roots,
        reduced,
        block: sys.block,
        paths_tracked: total,
        at_infinity,
        failures,
        added_by_symmetry,
        dedup_tol: cfg.dedup_tol,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::SparsePoly;

    fn poly(n: usize, terms: &[(&[u32], f64)]) -> SparsePoly<f64> {
        let mut p = SparsePoly::zero(n);
        for (e, c) in terms {
            p.add_term(e.to_vec(), *c);
        }
        p
    }

    #[test]
    fn permutations_are_complete_and_ordered() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn circle_and_line() {
        // x^2 + y^2 = 5, x - y = 1  → (2, 1), (-1, -2)
        let sys = PolySystem::new(
            vec![
                poly(2, &[(&[2, 0], 1.0), (&[0, 2], 1.0)]),
                poly(2, &[(&[1, 0], 1.0), (&[0, 1], -1.0)]),
            ],
            vec![5.0, 1.0],
            2,
        )
        .unwrap();
        let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
        let real = sol.real_roots(1e-8);
        assert_eq!(real.len(), 2);
        assert!((real[0][0] + 1.0).abs() < 1e-10 && (real[0][1] + 2.0).abs() < 1e-10);
        assert!((real[1][0] - 2.0).abs() < 1e-10 && (real[1][1] - 1.0).abs() < 1e-10);
        assert_eq!(sol.paths_tracked, 2);
        assert_eq!(sol.failures, 0);
    }

    #[test]
    fn paths_to_infinity_are_classified() {
        // x*y = 1, x = 2 → single root; the second path diverges.
        let sys = PolySystem::new(
            vec![
                poly(2, &[(&[1, 1], 1.0)]),
                poly(2, &[(&[1, 0], 1.0)]),
            ],
            vec![1.0, 2.0],
            2,
        )
        .unwrap();
        let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
        assert_eq!(sol.roots.len(), 1);
        assert_eq!(sol.at_infinity, 1);
        assert!((sol.roots[0].x[1] - Complex64::new(0.5, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn symmetric_system_roots_come_in_orbits() {
        // x + y = 3, x*y = 2 with blocks of size 1
        let sys = PolySystem::new(
            vec![
                poly(2, &[(&[1, 0], 1.0), (&[0, 1], 1.0)]),
                poly(2, &[(&[1, 1], 1.0)]),
            ],
            vec![3.0, 2.0],
            1,
        )
        .unwrap();
        let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
        assert_eq!(sol.roots.len(), 2);
        assert_eq!(sol.reduced.len(), 2);
        assert!((sol.reduced[0][0].re - 1.0).abs() < 1e-10);
        assert!((sol.reduced[1][0].re - 2.0).abs() < 1e-10);
    }

    #[test]
    fn constant_polynomial_is_rejected() {
        let sys = PolySystem::new(
            vec![poly(1, &[(&[0], 1.0)])],
            vec![0.0],
            1,
        )
        .unwrap();
        assert!(matches!(
            solve_system(&sys, &SolverConfig::default()),
            Err(Error::Solver(_))
        ));
    }
}
