use gnt_core::epsbuild::build_eps;
use gnt_core::poly::PolySystem;
use gnt_core::polysolve::{newton_refine, solve_system, SolverConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDA: [f64; 3] = [5.0, 3.0, 1.0];

/// EPS of a path with exact right-hand side `E(w)` for the reduced weights
/// of the links on it.
fn ideal_system(n: usize, lambda: &[f64], weights: &[&[f64]]) -> PolySystem {
    let polys = build_eps(n, lambda);
    let x: Vec<f64> = weights.iter().flat_map(|w| w.iter().copied()).collect();
    let rhs = polys.iter().map(|p| p.eval(&x)).collect();
    PolySystem::new(polys, rhs, lambda.len() - 1).unwrap()
}

fn contains(set: &[Vec<f64>], v: &[f64], tol: f64) -> bool {
    set.iter()
        .any(|s| s.iter().zip(v).all(|(a, b)| (a - b).abs() < tol))
}

#[test]
fn example_path_one_ideal_solution_set() {
    let sys = ideal_system(2, &LAMBDA, &[&[0.17, 0.80], &[0.13, 0.47]]);
    let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
    assert_eq!(sol.failures, 0);
    let reduced = sol.reduced_real(1e-8);
    assert_eq!(reduced.len(), 6, "{reduced:?}");
    for v in [
        [0.13, 0.47],
        [0.17, 0.80],
        [3.8304, -2.8410],
        [0.1933, 0.7768],
        [0.1143, 0.4840],
        [0.0058, -0.1323],
    ] {
        assert!(contains(&reduced, &v, 5e-4), "missing {v:?} in {reduced:?}");
    }
    assert_eq!(sol.roots.len() % 2, 0);
}

#[test]
fn example_path_two_ideal_solution_set() {
    let sys = ideal_system(2, &LAMBDA, &[&[0.17, 0.80], &[0.80, 0.15]]);
    let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
    let reduced = sol.reduced_real(1e-8);
    assert_eq!(reduced.len(), 6, "{reduced:?}");
    for v in [
        [0.8000, 0.1500],
        [0.1660, 0.7775],
        [5.5623, -4.5638],
        [0.1700, 0.8000],
        [0.8191, 0.1543],
        [0.0245, -0.0263],
    ] {
        assert!(contains(&reduced, &v, 5e-4), "missing {v:?} in {reduced:?}");
    }
}

#[test]
fn single_link_path_returns_rhs() {
    let lambda = [6.0, 4.0, 2.0, 1.0];
    let sys = ideal_system(1, &lambda, &[&[0.3, 0.25, 0.2]]);
    let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
    assert_eq!(sol.roots.len(), 1);
    for (z, u) in sol.roots[0].x.iter().zip(&sys.rhs) {
        assert!((z.re - u).abs() < 1e-14 && z.im == 0.0);
    }
}

#[test]
fn every_multistart_newton_root_is_found() {
    let sys = ideal_system(2, &LAMBDA, &[&[0.17, 0.80], &[0.13, 0.47]]);
    let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = 0;
    for _ in 0..400 {
        let x0: Vec<Complex64> = (0..4)
            .map(|_| Complex64::new(rng.random_range(-6.0..6.0), rng.random_range(-1.0..1.0)))
            .collect();
        if let Ok(r) = newton_refine(&sys, &x0, 1e-10, 60) {
            hits += 1;
            let known = sol.roots.iter().any(|s| {
                s.x.iter().zip(&r.x).all(|(a, b)| (a - b).norm() < 1e-6)
            });
            assert!(known, "Newton found a root the homotopy missed: {:?}", r.x);
        }
    }
    assert!(hits > 20);
}

#[test]
fn root_counts_are_multiples_of_the_orbit_size() {
    let cases: [(usize, Vec<f64>, Vec<Vec<f64>>); 3] = [
        (2, vec![3.0, 1.0], vec![vec![0.4], vec![0.7]]),
        (2, vec![5.0, 3.0, 1.0], vec![vec![0.2, 0.5], vec![0.6, 0.3]]),
        (3, vec![3.0, 1.0], vec![vec![0.2], vec![0.5], vec![0.8]]),
    ];
    for (n, lambda, w) in cases {
        let refs: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
        let sys = ideal_system(n, &lambda, &refs);
        let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
        let orbit: usize = (1..=n).product();
        assert!(!sol.roots.is_empty());
        assert_eq!(sol.roots.len() % orbit, 0, "n = {n}, lambda = {lambda:?}");
    }
}

#[test]
fn solution_set_does_not_depend_on_gamma_seed() {
    let sys = ideal_system(2, &LAMBDA, &[&[0.17, 0.80], &[0.13, 0.47]]);
    let a = solve_system(&sys, &SolverConfig::default()).unwrap();
    let b = solve_system(
        &sys,
        &SolverConfig {
            seed: 12345,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    assert_eq!(a.roots.len(), b.roots.len());
    for (ra, rb) in a.roots.iter().zip(&b.roots) {
        for (x, y) in ra.x.iter().zip(&rb.x) {
            assert!((x - y).norm() < 1e-8);
        }
    }
}

#[test]
fn small_rhs_perturbation_moves_roots_slightly() {
    let sys = ideal_system(2, &LAMBDA, &[&[0.17, 0.80], &[0.13, 0.47]]);
    let base = solve_system(&sys, &SolverConfig::default()).unwrap();
    let rhs: Vec<f64> = sys.rhs.iter().map(|u| u + 1e-7).collect();
    let moved = solve_system(&sys.with_rhs(rhs).unwrap(), &SolverConfig::default()).unwrap();
    assert_eq!(base.roots.len(), moved.roots.len());
    for r in &base.roots {
        let nearest = moved
            .roots
            .iter()
            .map(|m| {
                r.x.iter()
                    .zip(&m.x)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-4, "root moved by {nearest}");
    }
}

#[test]
fn refine_keeps_exact_root_and_converges_nearby() {
    let sys = ideal_system(2, &LAMBDA, &[&[0.17, 0.80], &[0.13, 0.47]]);
    let root: Vec<Complex64> = [0.17, 0.80, 0.13, 0.47]
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    let r = newton_refine(&sys, &root, 1e-10, 10).unwrap();
    assert_eq!(r.iterations, 0);
    assert_eq!(r.x, root);

    let sol = solve_system(&sys, &SolverConfig::default()).unwrap();
    let target = sol.roots.iter().find(|s| (s.x[0].re - 0.1933).abs() < 1e-3).unwrap();
    let start: Vec<Complex64> = target.x.iter().map(|z| z + 1e-3).collect();
    let r = newton_refine(&sys, &start, 1e-10, 5).unwrap();
    assert!(r.iterations <= 5);

    let far = vec![Complex64::new(1e3, 0.0); 4];
    assert!(newton_refine(&sys, &far, 1e-10, 8).is_err());
}
