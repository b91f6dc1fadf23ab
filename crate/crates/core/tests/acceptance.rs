//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting. Run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use gnt_core::epsbuild::{
    build_eps, build_t_tau, equation_index, expand_lambda_power, stage_factor, Composition,
};
use gnt_core::experiments::{run_experiment, setup, Experiment};
use gnt_core::expmeans::{build_mean_system, default_tau, elementary_symmetric, solve_means};
use gnt_core::linalg;
use gnt_core::mgfest::{assemble_constants, per_point_tolerance, required_samples};
use gnt_core::model::{GhMix, RoutingMatrix};
use gnt_core::pipeline::{estimate_means, MgfSource, PipelineConfig};
use gnt_core::poly::PolySystem;
use gnt_core::polysolve::{solve_system, SolverConfig};
use gnt_core::simulate::{sample_paths, sample_paths_exponential};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 1_000_000;
const SEEDS: u64 = 20;

fn verdict(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
}

fn distinct_rates(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..8.0)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        if v.windows(2).all(|w| w[0] - w[1] > 0.3) {
            return v;
        }
    }
}

fn distinct_points(rng: &mut ChaCha8Rng, count: usize, lo: f64, hi: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..count).map(|_| rng.random_range(lo..hi)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[1] - w[0] > 1e-3 * hi) {
            return v;
        }
    }
}

struct Replication {
    norms: Vec<f64>,
    within: usize,
    slowest: Duration,
    worst: Vec<f64>,
}

/// Runs `seeds` sampled replications; `within` counts seeds whose every
/// weight is within `tol` of the ground truth.
fn replicate(e: Experiment, tol: f64) -> Replication {
    let truth = setup(e).weights;
    let mut out = Replication {
        norms: Vec::new(),
        within: 0,
        slowest: Duration::ZERO,
        worst: Vec::new(),
    };
    for seed in 0..SEEDS {
        let cfg = PipelineConfig {
            seed,
            ..PipelineConfig::default()
        };
        let start = Instant::now();
        let r = run_experiment(e, Some(SAMPLES), &cfg).expect("pipeline runs");
        out.slowest = out.slowest.max(start.elapsed());
        out.norms.push(r.error_norm.unwrap_or(f64::INFINITY));
        let worst = r
            .estimated
            .iter()
            .zip(&truth)
            .map(|(est, t)| match est {
                Some(w) => w.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        out.worst.push(worst);
        if worst <= tol {
            out.within += 1;
        }
    }
    out
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[test]
fn criterion_01_ideal_case_exactness() {
    let start = Instant::now();
    let r = run_experiment(Experiment::Expt1, None, &PipelineConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let err = r
        .estimated
        .iter()
        .zip(&r.actual)
        .flat_map(|(e, a)| {
            let e = e.clone().unwrap_or_else(|| vec![f64::INFINITY; a.len()]);
            e.into_iter().zip(a.clone()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    let ok = err <= 1e-6 && elapsed < Duration::from_secs(10);
    verdict(1, ok, &format!("max weight error {err:.2e}, {elapsed:.2?}"));
    assert!(ok);
}

#[test]
fn criterion_02_table_two() {
    let lambda = [5.0, 3.0, 1.0];
    let polys = build_eps(2, &lambda);
    let w = [0.17, 0.80, 0.13, 0.47];
    let rhs = polys.iter().map(|p| p.eval(&w)).collect();
    let start = Instant::now();
    let sys = PolySystem::new(polys, rhs, 2).unwrap();
    let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let reduced = sol.reduced_real(1e-8);
    let table = [
        [0.1300, 0.4700],
        [0.1700, 0.8000],
        [3.8304, -2.8410],
        [0.1933, 0.7768],
        [0.1143, 0.4840],
        [0.0058, -0.1323],
    ];
    let missing: Vec<_> = table
        .iter()
        .filter(|t| {
            !reduced
                .iter()
                .any(|r| r.iter().zip(t.iter()).all(|(a, b)| (a - b).abs() <= 5e-4))
        })
        .collect();
    let ok = reduced.len() == 6
        && missing.is_empty()
        && sol.paths_tracked == 16
        && elapsed < Duration::from_secs(5);
    verdict(
        2,
        ok,
        &format!(
            "{} reduced solutions, {} tracked paths, missing {missing:?}, {elapsed:.2?}",
            reduced.len(),
            sol.paths_tracked
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_03_experiment_one() {
    let r = replicate(Experiment::Expt1, 0.06);
    let med = median(&r.norms);
    let ok = med <= 0.10 && r.within >= 16 && r.slowest < Duration::from_secs(120);
    verdict(
        3,
        ok,
        &format!(
            "median error norm {med:.4}, {}/{SEEDS} seeds within 0.06, slowest seed {:.2?}",
            r.within, r.slowest
        ),
    );
    assert!(ok, "norms {:?} worst {:?}", r.norms, r.worst);
}

#[test]
fn criterion_04_experiment_three() {
    let r = replicate(Experiment::Expt3, 0.06);
    let med = median(&r.norms);
    let ok = med <= 0.12 && r.within >= 16 && r.slowest < Duration::from_secs(120);
    verdict(
        4,
        ok,
        &format!(
            "median error norm {med:.4}, {}/{SEEDS} seeds within 0.06, slowest seed {:.2?}",
            r.within, r.slowest
        ),
    );
    assert!(ok, "norms {:?} worst {:?}", r.norms, r.worst);
}

#[test]
fn criterion_05_experiment_two() {
    let r = replicate(Experiment::Expt2, f64::INFINITY);
    let med = median(&r.norms);
    let ok = med <= 0.35;
    verdict(5, ok, &format!("median error norm {med:.4}"));
    assert!(ok, "norms {:?}", r.norms);
}

fn random_composition(rng: &mut ChaCha8Rng, parts: usize, total: u32) -> Composition {
    loop {
        let mut c = vec![0u32; parts];
        for _ in 0..total {
            c[rng.random_range(0..parts)] += 1;
        }
        if c[..parts - 1].iter().any(|&v| v > 0) {
            return Composition(c);
        }
    }
}

#[test]
fn criterion_06_expansion_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=4u32);
        let d = rng.random_range(1..=3usize);
        let lambda = distinct_rates(&mut rng, d + 1);
        let last = lambda[d];
        let comp = random_composition(&mut rng, d + 1, n);
        let terms = expand_lambda_power(&comp, &lambda).unwrap();
        for _ in 0..20 {
            let t = rng.random_range(0.01..20.0);
            // Direct product Λ_1^{L_1} ⋯ Λ_d^{L_d} λ_{d+1}^{L_{d+1}}.
            let direct: f64 = (0..d)
                .map(|k| ((lambda[k] - last) * t / (lambda[k] + t)).powi(comp.0[k] as i32))
                .product::<f64>()
                * last.powi(comp.0[d] as i32);
            let expanded: f64 = terms
                .iter()
                .map(|term| {
                    term.coeff
                        * stage_factor(term.stage, &t, &lambda).powi(term.power as i32)
                        * last.powi((n - term.power) as i32)
                })
                .sum();
            worst = worst.max((expanded - direct).abs() / direct.abs());
        }
    }
    let ok = worst < 1e-9;
    verdict(6, ok, &format!("200 cases x 20 points, worst relative error {worst:.2e}"));
    assert!(ok);
}

/// Determinant by Gaussian elimination over the rationals.
fn exact_det(mut m: Vec<Vec<BigRational>>) -> BigRational {
    let n = m.len();
    let mut det = BigRational::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !m[r][c].is_zero()) else {
            return BigRational::zero();
        };
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c].clone();
        for r in c + 1..n {
            let f = m[r][c].clone() / m[c][c].clone();
            for k in c..n {
                let v = m[c][k].clone() * f.clone();
                m[r][k] -= v;
            }
        }
    }
    det
}

fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[test]
fn criterion_07_representation_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=3usize);
        let d = rng.random_range(1..=3usize);
        let lambda = distinct_rates(&mut rng, d + 1);
        let last = lambda[d];
        let tau = distinct_points(&mut rng, d * n, 0.05, 10.0);
        let x: Vec<f64> = (0..d * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..d * n).map(|_| rng.random_range(0.0..3.0)).collect();
        let t_tau = build_t_tau(&tau, n, &lambda, f64::INFINITY).unwrap();
        let e: Vec<f64> = build_eps(n, &lambda).iter().map(|p| p.eval(&x)).collect();
        for (j, &t) in tau.iter().enumerate() {
            let c = mu[j] - last.powi(n as i32);
            let lhs: f64 = (0..d * n).map(|k| t_tau[(j, k)] * e[k]).sum::<f64>() - c;
            // f(x; t) = Π_j [Σ_k x_jk Λ_k(t) + λ_{d+1}] − μ(t).
            let direct: f64 = (0..n)
                .map(|link| {
                    (0..d)
                        .map(|k| x[link * d + k] * stage_factor(k, &t, &lambda))
                        .sum::<f64>()
                        + last
                })
                .product::<f64>()
                - mu[j];
            worst = worst.max((lhs - direct).abs() / (1.0 + direct.abs()));
        }
    }

    // Invertibility in exact arithmetic: for n = d = 3 the matrix is
    // numerically singular in double precision although its determinant is not
    // zero.
    let mut singular = 0;
    let mut tried = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=3usize);
        let d = rng.random_range(1..=3usize);
        let mut lam: Vec<i64> = Vec::new();
        while lam.len() < d + 1 {
            let v = rng.random_range(2..40i64);
            if !lam.contains(&v) {
                lam.push(v);
            }
        }
        lam.sort_unstable_by(|a, b| b.cmp(a));
        let lambda: Vec<BigRational> = lam.iter().map(|&v| rational(v, 4)).collect();
        let mut pts: Vec<i64> = Vec::new();
        while pts.len() < d * n {
            let v = rng.random_range(1..400i64);
            if !pts.contains(&v) {
                pts.push(v);
            }
        }
        let last = lambda[d].clone();
        let m: Vec<Vec<BigRational>> = pts
            .iter()
            .map(|&p| {
                let t = rational(p, 40);
                let mut row = vec![BigRational::zero(); d * n];
                for k in 0..d {
                    let f = stage_factor(k, &t, &lambda);
                    for q in 1..=n as u32 {
                        row[equation_index(k, q, n)] =
                            num_traits::pow(f.clone(), q as usize) * num_traits::pow(last.clone(), n - q as usize);
                    }
                }
                row
            })
            .collect();
        tried += 1;
        if exact_det(m).is_zero() {
            singular += 1;
        }
    }
    let ok = worst < 1e-9 && singular == 0;
    verdict(
        7,
        ok,
        &format!("worst error {worst:.2e}; {singular}/{tried} exactly singular T_tau"),
    );
    assert!(ok);
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

#[test]
fn criterion_08_symmetry_and_root_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sym_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=4usize);
        let d = rng.random_range(1..=3usize);
        let lambda = distinct_rates(&mut rng, d + 1);
        let polys = build_eps(n, &lambda);
        let x: Vec<f64> = (0..d * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let xs: Vec<f64> = order.iter().flat_map(|&j| x[j * d..(j + 1) * d].to_vec()).collect();
        for p in &polys {
            let (a, b) = (p.eval(&x), p.eval(&xs));
            sym_worst = sym_worst.max((a - b).abs() / (1.0 + a.abs()));
        }
    }
    let cfg = SolverConfig {
        symmetrize: false,
        ..SolverConfig::default()
    };
    let mut bad = Vec::new();
    for i in 0..50 {
        let n = rng.random_range(1..=3usize);
        let d = if n == 3 { 1 } else { rng.random_range(1..=2usize) };
        let lambda = distinct_rates(&mut rng, d + 1);
        let polys = build_eps(n, &lambda);
        let w: Vec<f64> = (0..d * n).map(|_| rng.random_range(0.0..1.0)).collect();
        let rhs = polys.iter().map(|p| p.eval(&w)).collect();
        let sys = PolySystem::new(polys, rhs, d).unwrap();
        let sol = solve_system(&sys, &cfg).unwrap();
        if sol.roots.is_empty() || sol.roots.len() % factorial(n) != 0 {
            bad.push((i, n, d, sol.roots.len()));
        }
    }
    let ok = sym_worst < 1e-12 && bad.is_empty();
    verdict(
        8,
        ok,
        &format!("symmetry error {sym_worst:.2e}, root counts not a multiple of N!: {bad:?}"),
    );
    assert!(ok);
}

fn exact_exp_mgf(means: &[f64], t: f64) -> f64 {
    means.iter().map(|m| 1.0 / (1.0 + m * t)).product()
}

#[test]
fn criterion_09_exponential_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Exact recovery.
    let mut exact_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=4usize);
        let mut m = distinct_rates(&mut rng, n);
        let tau = default_tau(n, m.iter().sum()).unwrap();
        let mgf: Vec<f64> = tau.iter().map(|&t| exact_exp_mgf(&m, t)).collect();
        let sol = solve_means(&build_mean_system(&mgf, &tau).unwrap()).unwrap();
        m.sort_by(f64::total_cmp);
        for (a, b) in sol.means.iter().zip(&m) {
            exact_worst = exact_worst.max((a - b).abs() / b);
        }
    }

    // Sampled mode on the two-path tree.
    let matrix = RoutingMatrix::new(vec![vec![1, 1, 0], vec![1, 0, 1]]).unwrap();
    let truth = [1.0, 2.0, 3.0];
    let mut sampled_worst = 0.0f64;
    for seed in 0..5 {
        let set = sample_paths_exponential(&matrix, &truth, SAMPLES, seed).unwrap();
        let map: BTreeMap<usize, Vec<f64>> = set.paths.into_iter().map(|p| (p.path, p.values)).collect();
        let cfg = PipelineConfig {
            seed,
            ..PipelineConfig::default()
        };
        let r = estimate_means(&matrix, MgfSource::Samples(&map), &cfg, Some(&truth)).unwrap();
        for (l, t) in r.result.links.iter().zip(truth) {
            sampled_worst = sampled_worst.max((l.mean.unwrap() - t).abs() / t);
        }
    }

    // Multivariate system against the Vieta reduction.
    let mut mismatched = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=3usize);
        let m = distinct_rates(&mut rng, n);
        let tau = default_tau(n, m.iter().sum()).unwrap();
        let mgf: Vec<f64> = tau.iter().map(|&t| exact_exp_mgf(&m, t)).collect();
        let system = build_mean_system(&mgf, &tau).unwrap();
        let vieta = solve_means(&system).unwrap().means;
        let sys = PolySystem::new(elementary_symmetric(n), system.esp.clone(), 1).unwrap();
        let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
        let roots = sol.real_roots(1e-8);
        let perms_ok = roots.len() == factorial(n)
            && roots.iter().all(|r| {
                let mut s = r.clone();
                s.sort_by(f64::total_cmp);
                s.iter().zip(&vieta).all(|(a, b)| (a - b).abs() < 1e-8)
            })
            && {
                let mut firsts: Vec<f64> = sol.reduced_real(1e-8).into_iter().map(|v| v[0]).collect();
                firsts.sort_by(f64::total_cmp);
                firsts.len() == n && firsts.iter().zip(&vieta).all(|(a, b)| (a - b).abs() < 1e-8)
            };
        if !perms_ok {
            mismatched += 1;
        }
    }
    let ok = exact_worst < 1e-9 && sampled_worst <= 0.02 && mismatched == 0;
    verdict(
        9,
        ok,
        &format!(
            "exact relative error {exact_worst:.2e}, sampled relative error {sampled_worst:.4}, {mismatched}/20 solution-set mismatches"
        ),
    );
    assert!(ok);
}

fn union_bound(eps: f64, points: usize, l: u64) -> f64 {
    points as f64 * (-2.0 * eps * eps * l as f64).exp()
}

#[test]
fn criterion_10_hoeffding_calculator() {
    // Brute force: smallest L whose union bound is at most kappa.
    let mut inverted = true;
    for &eps in &[0.02, 0.05, 0.1, 0.3] {
        for &kappa in &[0.01, 0.05, 0.2] {
            for &points in &[1usize, 2, 4, 6, 9] {
                let l = required_samples(eps, kappa, points).unwrap();
                let brute = (1u64..).find(|&l| union_bound(eps, points, l) <= kappa).unwrap();
                inverted &= l == brute;
            }
        }
    }

    // A single-link path with d = 2; the target is ‖T⁻¹ĉ − E(w)‖ < ε(δ).
    // Longer paths push the bound beyond 1e10 samples.
    let lambda = [5.0, 3.0, 1.0];
    let matrix = RoutingMatrix::new(vec![vec![1]]).unwrap();
    let w = [vec![0.17, 0.80, 0.03]];
    let mixes: Vec<GhMix> = w.iter().map(|w| GhMix::new(lambda.to_vec(), w.clone()).unwrap()).collect();
    let tau = [1.0, 4.0];
    let n = 1;
    let eps_delta = 0.2;
    let kappa = 0.05;
    let t_tau = build_t_tau(&tau, n, &lambda, f64::INFINITY).unwrap();
    let per_point = per_point_tolerance(eps_delta, &t_tau, &tau, n, &lambda);
    let l = required_samples(per_point, kappa, tau.len()).unwrap() as usize;
    let x: Vec<f64> = w.iter().flat_map(|v| v[..2].to_vec()).collect();
    let target: Vec<f64> = build_eps(n, &lambda).iter().map(|p| p.eval(&x)).collect();
    let mut successes = 0;
    for seed in 0..100 {
        let set = sample_paths(&matrix, &mixes, l, 1000 + seed).unwrap();
        let probe = assemble_constants(&set.paths[0].values, &tau, n, &lambda).unwrap();
        let u = linalg::solve(&t_tau, &probe.c_hat).unwrap();
        let err = u.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if err < eps_delta {
            successes += 1;
        }
    }
    let ok = inverted && successes >= 95;
    verdict(
        10,
        ok,
        &format!("bound inverted exactly: {inverted}; L = {l}, {successes}/100 trials within tolerance"),
    );
    assert!(ok);
}
