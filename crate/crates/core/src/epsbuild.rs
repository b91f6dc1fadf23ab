//! Construction of the per-path polynomial system `E(x) = u`.
//!
//! For a path crossing `n` links, the path MGF scaled by `(λ_{d+1} + t)^n` is
//! a product of `n` affine forms in the unknown weights. Expanding that
//! product and collecting the `t`-dependent coefficients in the basis
//! `Λ_k(t)^q λ_{d+1}^{n-q}` (`k ∈ [d]`, `q ∈ [n]`) leaves `d·n` polynomials
//! `h_kq(x)` that do not depend on `t`. Evaluating the basis at `d·n`
//! distinct points gives the square matrix `T_τ`, and `E(w) = T_τ⁻¹ c_τ`.
//!
//! Indexing conventions (all 0-based here):
//! * variable `(j, k)` (link slot `j < n`, stage `k < d`) is coordinate `j·d + k`;
//! * equation `(k, q)` (stage `k < d`, power `q ∈ 1..=n`) is row `k·n + q - 1`.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Num;
use std::ops::Neg;

use crate::error::{Error, Result};
use crate::linalg;
use crate::poly::{PolySystem, SparsePoly};

/// Default upper bound on `cond(T_τ)`.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e10;

/// Scalar type the coefficient formulas are evaluated in: `f64` for the
/// solver, `BigRational` for exact checks.
pub trait Scalar: Num + Neg<Output = Self> + Clone {
    fn from_int(v: i64) -> Self;
}

impl Scalar for f64 {
    fn from_int(v: i64) -> Self {
        v as f64
    }
}

impl Scalar for BigRational {
    fn from_int(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
}

/// A composition `L = (L_1, …, L_{d+1})` of the path length into stage counts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Composition(pub Vec<u32>);

impl Composition {
    pub fn parts(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Count for the reference (last) stage.
    pub fn reference_count(&self) -> u32 {
        *self.0.last().expect("nonempty composition")
    }

    /// Stages `k < d` with a positive count.
    pub fn support(&self) -> Vec<usize> {
        let d = self.parts() - 1;
        (0..d).filter(|&k| self.0[k] > 0).collect()
    }
}

/// All compositions of `total` into `parts` nonnegative integers, in
/// lexicographically decreasing order.
pub fn enumerate_compositions(parts: usize, total: u32) -> Vec<Composition> {
    fn rec(parts: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Composition>) {
        if prefix.len() + 1 == parts {
            prefix.push(remaining);
            out.push(Composition(prefix.clone()));
            prefix.pop();
            return;
        }
        for v in (0..=remaining).rev() {
            prefix.push(v);
            rec(parts, remaining - v, prefix, out);
            prefix.pop();
        }
    }
    assert!(parts >= 1, "at least one part");
    let mut out = Vec::new();
    rec(parts, total, &mut Vec::with_capacity(parts), &mut out);
    out
}

pub fn variable_index(slot: usize, stage: usize, d: usize) -> usize {
    slot * d + stage
}

pub fn equation_index(stage: usize, power: u32, n: usize) -> usize {
    stage * n + power as usize - 1
}

/// Sum over all stage assignments `b ∈ [d+1]^n` of type `L` of the monomial
/// `Π_{j: b_j ≠ d+1} x_{j b_j}`.
pub fn g_poly<C: Scalar>(comp: &Composition) -> SparsePoly<C> {
    let d = comp.parts() - 1;
    let n = comp.total() as usize;
    let mut out = SparsePoly::zero(n * d);
    let mut remaining = comp.0.clone();
    let mut exps = vec![0u32; n * d];
    fn rec<C: Scalar>(
        slot: usize,
        n: usize,
        d: usize,
        remaining: &mut [u32],
        exps: &mut [u32],
        out: &mut SparsePoly<C>,
    ) {
        if slot == n {
            out.add_term(exps.to_vec(), C::one());
            return;
        }
        for stage in 0..=d {
            if remaining[stage] == 0 {
                continue;
            }
            remaining[stage] -= 1;
            if stage < d {
                exps[variable_index(slot, stage, d)] = 1;
            }
            rec(slot + 1, n, d, remaining, exps, out);
            if stage < d {
                exps[variable_index(slot, stage, d)] = 0;
            }
            remaining[stage] += 1;
        }
    }
    rec(0, n, d, &mut remaining, &mut exps, &mut out);
    out
}

/// `β_jk = λ_j (λ_k − λ_{d+1}) / (λ_j − λ_k)` for `j ≠ k`, 1 on the diagonal.
pub fn beta_coeff<C: Scalar>(j: usize, k: usize, lambda: &[C]) -> C {
    if j == k {
        return C::one();
    }
    let last = lambda.last().expect("rates").clone();
    lambda[j].clone() * (lambda[k].clone() - last) / (lambda[j].clone() - lambda[k].clone())
}

fn binomial(n: u64, k: u64) -> i64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as i64
}

/// Nonnegative integer vectors over `slots` positions summing to `total`.
fn bounded_vectors(slots: usize, total: u32) -> Vec<Vec<u32>> {
    if slots == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for c in enumerate_compositions(slots, total) {
        out.push(c.0);
    }
    out
}

/// `γ_kq(L)`, the coefficient of `Λ_k^q` in the partial-fraction expansion of
/// `Π_{r ∈ D(L)} Λ_r^{L_r}`.
pub fn gamma_coeff<C: Scalar>(k: usize, q: u32, comp: &Composition, lambda: &[C]) -> Result<C> {
    let support = comp.support();
    if !support.contains(&k) {
        return Err(Error::Domain(format!(
            "stage {} is not in the support of {:?}",
            k + 1,
            comp.0
        )));
    }
    let lk = comp.0[k];
    if q == 0 || q > lk {
        return Err(Error::Domain(format!(
            "power {q} outside 1..={lk} for stage {}",
            k + 1
        )));
    }
    let mut prefactor = C::one();
    for &r in &support {
        prefactor = prefactor * num_traits::pow(beta_coeff(k, r, lambda), comp.0[r] as usize);
    }
    let free: Vec<usize> = support.iter().copied().filter(|&r| r != k).collect();
    let mut sum = C::zero();
    for s in bounded_vectors(free.len(), lk - q) {
        let mut term = C::one();
        for (&r, &sr) in free.iter().zip(&s) {
            let lr = comp.0[r] as u64;
            let binom = binomial(lr + sr as u64 - 1, lr - 1);
            term = term
                * C::from_int(binom)
                * num_traits::pow(beta_coeff(r, k, lambda), sr as usize);
        }
        sum = sum + term;
    }
    Ok(prefactor * sum)
}

/// One term of the expansion `Λ^L = Σ coeff · Λ_k^q(t) · λ_{d+1}^{n-q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionTerm<C> {
    pub stage: usize,
    pub power: u32,
    pub coeff: C,
}

/// Expands `Λ^L = Λ_1^{L_1} ⋯ Λ_d^{L_d} λ_{d+1}^{L_{d+1}}` in the basis
/// `Λ_k^q(t) λ_{d+1}^{n-q}`. The expansion holds for every `t`.
pub fn expand_lambda_power<C: Scalar>(
    comp: &Composition,
    lambda: &[C],
) -> Result<Vec<ExpansionTerm<C>>> {
    let support = comp.support();
    if support.is_empty() {
        return Err(Error::ConstantTerm);
    }
    let n = comp.total();
    let last = lambda.last().expect("rates").clone();
    let mut out = Vec::new();
    for &k in &support {
        for q in 1..=comp.0[k] {
            let gamma = gamma_coeff(k, q, comp, lambda)?;
            let shift = (n - q - comp.reference_count()) as usize;
            out.push(ExpansionTerm {
                stage: k,
                power: q,
                coeff: gamma / num_traits::pow(last.clone(), shift),
            });
        }
    }
    Ok(out)
}

/// The map `E = (h_11..h_1n, …, h_d1..h_dn)` for a path of `n` links and
/// `d + 1` stages with rates `lambda`.
pub fn build_eps_generic<C: Scalar>(n: usize, lambda: &[C]) -> Vec<SparsePoly<C>> {
    let d = lambda.len() - 1;
    let mut h: Vec<SparsePoly<C>> = (0..d * n).map(|_| SparsePoly::zero(d * n)).collect();
    for comp in enumerate_compositions(d + 1, n as u32) {
        let terms = match expand_lambda_power(&comp, lambda) {
            Ok(t) => t,
            Err(Error::ConstantTerm) => continue,
            Err(e) => unreachable!("expansion of a valid composition: {e}"),
        };
        let g: SparsePoly<C> = g_poly(&comp);
        for term in terms {
            h[equation_index(term.stage, term.power, n)].add_scaled(&g, &term.coeff);
        }
    }
    h
}

pub fn build_eps(n: usize, lambda: &[f64]) -> Vec<SparsePoly<f64>> {
    build_eps_generic(n, lambda)
}

/// Exact-rational construction, for identity checks.
pub fn build_eps_exact(n: usize, lambda: &[BigRational]) -> Vec<SparsePoly<BigRational>> {
    build_eps_generic(n, lambda)
}

/// `Λ_k(t) = (λ_k − λ_{d+1}) t / (λ_k + t)`.
pub fn stage_factor<C: Scalar>(k: usize, t: &C, lambda: &[C]) -> C {
    let last = lambda.last().expect("rates").clone();
    (lambda[k].clone() - last) * t.clone() / (lambda[k].clone() + t.clone())
}

/// Row of `T_τ` for a single evaluation point.
pub fn t_row(t: f64, n: usize, lambda: &[f64]) -> Vec<f64> {
    let d = lambda.len() - 1;
    let last = lambda[d];
    let mut row = vec![0.0; d * n];
    for k in 0..d {
        let f = stage_factor(k, &t, lambda);
        for q in 1..=n as u32 {
            row[equation_index(k, q, n)] = f.powi(q as i32) * last.powi((n as u32 - q) as i32);
        }
    }
    row
}

/// `(T_τ)_{jk}` over the evaluation points `tau`, with the condition number
/// checked against `condition_limit`.
pub fn build_t_tau(
    tau: &[f64],
    n: usize,
    lambda: &[f64],
    condition_limit: f64,
) -> Result<DMatrix<f64>> {
    let d = lambda.len() - 1;
    validate_tau(tau, d * n)?;
    let mut m = DMatrix::zeros(d * n, d * n);
    for (j, &t) in tau.iter().enumerate() {
        for (c, v) in t_row(t, n, lambda).into_iter().enumerate() {
            m[(j, c)] = v;
        }
    }
    let cond = linalg::condition_number(&m);
    if !(cond <= condition_limit) {
        return Err(Error::Singular { condition: cond });
    }
    Ok(m)
}

/// Eigenvalue floor, relative to the largest, used when whitening `Cov(ĉ)`.
pub const WHITENING_FLOOR: f64 = 1e-11;

/// Estimate of `u = E(w)` from MGF values `mgf` at `tau`, `|tau| ≥ d·n`.
///
/// With exactly `d·n` points and no covariance this is `T_τ⁻¹ ĉ_τ`. With
/// more points it is the least-squares solution of `T_τ u ≈ ĉ_τ`, weighted
/// by the inverse covariance of `ĉ` when `cov` (of the MGF estimates) is
/// given. Returns `u` and `cond(T_τ)`.
pub fn estimate_rhs(
    tau: &[f64],
    mgf: &[f64],
    cov: Option<&DMatrix<f64>>,
    n: usize,
    lambda: &[f64],
    condition_limit: f64,
) -> Result<(Vec<f64>, f64)> {
    let d = lambda.len() - 1;
    if tau.len() < d * n {
        return Err(Error::Dimension(format!(
            "need at least {} evaluation points, got {}",
            d * n,
            tau.len()
        )));
    }
    validate_tau(tau, tau.len())?;
    if mgf.len() != tau.len() {
        return Err(Error::Dimension(format!(
            "{} MGF values for {} points",
            mgf.len(),
            tau.len()
        )));
    }
    let last = lambda[d];
    let scale: Vec<f64> = tau.iter().map(|&t| (last + t).powi(n as i32)).collect();
    let c: Vec<f64> = scale
        .iter()
        .zip(mgf)
        .map(|(s, m)| s * m - last.powi(n as i32))
        .collect();
    let mut t = DMatrix::zeros(tau.len(), d * n);
    for (j, &tj) in tau.iter().enumerate() {
        for (col, v) in t_row(tj, n, lambda).into_iter().enumerate() {
            t[(j, col)] = v;
        }
    }
    let cond = linalg::condition_number(&t);
    if !(cond <= condition_limit) {
        return Err(Error::Singular { condition: cond });
    }
    let u = match cov {
        None if tau.len() == d * n => linalg::solve(&t, &c)?,
        None => linalg::lstsq(&t, &c)?,
        Some(cov) => {
            let k = tau.len();
            let cc = DMatrix::from_fn(k, k, |i, j| scale[i] * cov[(i, j)] * scale[j]);
            let w = linalg::whitening(&cc, WHITENING_FLOOR);
            let wc = &w * nalgebra::DVector::from_column_slice(&c);
            linalg::lstsq(&(&w * &t), wc.as_slice())?
        }
    };
    Ok((u, cond))
}

pub(crate) fn validate_tau(tau: &[f64], count: usize) -> Result<()> {
    if tau.len() != count {
        return Err(Error::Dimension(format!(
            "need {count} evaluation points, got {}",
            tau.len()
        )));
    }
    if let Some(t) = tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Domain(format!("evaluation point {t} is not positive")));
    }
    for i in 0..tau.len() {
        for j in i + 1..tau.len() {
            if tau[i] == tau[j] {
                return Err(Error::Domain(format!(
                    "evaluation point {} repeated; the coefficient matrix is singular",
                    tau[i]
                )));
            }
        }
    }
    Ok(())
}

/// The system `E(x) = T_τ⁻¹ ĉ_τ` for one path.
#[derive(Debug, Clone)]
pub struct EpsSystem {
    pub system: PolySystem,
    pub t_matrix: DMatrix<f64>,
    pub c_hat: Vec<f64>,
    pub links: usize,
    pub lambda: Vec<f64>,
    pub path: Option<usize>,
}

/// Solves `T_τ u = ĉ` and packages the system.
pub fn assemble_system(
    polys: Vec<SparsePoly<f64>>,
    t_matrix: DMatrix<f64>,
    c_hat: Vec<f64>,
    lambda: &[f64],
) -> Result<EpsSystem> {
    let d = lambda.len() - 1;
    if d == 0 || polys.len() % d != 0 {
        return Err(Error::Dimension(format!(
            "{} polynomials do not match {} free weights",
            polys.len(),
            d
        )));
    }
    let links = polys.len() / d;
    if t_matrix.nrows() != polys.len() || c_hat.len() != polys.len() {
        return Err(Error::Dimension(format!(
            "system of size {} with {}x{} matrix and {} constants",
            polys.len(),
            t_matrix.nrows(),
            t_matrix.ncols(),
            c_hat.len()
        )));
    }
    let rhs = linalg::solve(&t_matrix, &c_hat)?;
    let system = PolySystem::new(polys, rhs, d)?;
    Ok(EpsSystem {
        system,
        t_matrix,
        c_hat,
        links,
        lambda: lambda.to_vec(),
        path: None,
    })
}

impl EpsSystem {
    pub fn free_dim(&self) -> usize {
        self.lambda.len() - 1
    }

    pub fn rhs(&self) -> &[f64] {
        &self.system.rhs
    }

    /// `E(x)`.
    pub fn eval_map(&self, x: &[f64]) -> Vec<f64> {
        self.system.polys.iter().map(|p| p.eval(x)).collect()
    }

    /// `E(x) − u`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.system.residual(x)
    }

    pub fn variable_names(&self) -> Vec<String> {
        variable_names(self.links, self.free_dim())
    }

    /// Plain-text listing of the polynomials, one `h_kq` per line.
    pub fn dump(&self) -> String {
        dump_polys(&self.system.polys, self.links, self.free_dim())
    }
}

pub fn variable_names(n: usize, d: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(n * d);
    for j in 0..n {
        for k in 0..d {
            names.push(format!("x{}{}", j + 1, k + 1));
        }
    }
    names
}

pub fn dump_polys(polys: &[SparsePoly<f64>], n: usize, d: usize) -> String {
    let names = variable_names(n, d);
    let mut out = String::new();
    for k in 0..d {
        for q in 1..=n as u32 {
            let p = &polys[equation_index(k, q, n)];
            out.push_str(&format!("h{}{} = {}\n", k + 1, q, p.display_with(&names)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use crate::model::GhMix;

    const LAMBDA: [f64; 3] = [5.0, 3.0, 1.0];

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn composition_counts() {
        assert_eq!(
            enumerate_compositions(2, 1),
            vec![Composition(vec![1, 0]), Composition(vec![0, 1])]
        );
        assert_eq!(enumerate_compositions(3, 2).len(), 6);
        assert_eq!(enumerate_compositions(4, 3).len(), 20);
        let all = enumerate_compositions(4, 3);
        let unique: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        assert!(all.iter().all(|c| c.total() == 3));
    }

    #[test]
    fn g_poly_examples() {
        let g: SparsePoly<f64> = g_poly(&Composition(vec![1, 1, 0]));
        // x11 x22 + x12 x21 with order (x11, x12, x21, x22)
        assert_eq!(g.num_terms(), 2);
        assert_eq!(g.coeff(&[1, 0, 0, 1]), Some(&1.0));
        assert_eq!(g.coeff(&[0, 1, 1, 0]), Some(&1.0));

        let one: SparsePoly<f64> = g_poly(&Composition(vec![0, 0, 2]));
        assert_eq!(one.num_terms(), 1);
        assert_eq!(one.coeff(&[0, 0, 0, 0]), Some(&1.0));

        let three: SparsePoly<f64> = g_poly(&Composition(vec![2, 1]));
        assert_eq!(three.num_terms(), 3);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_coeff(0, 0, &LAMBDA), 1.0);
        assert_eq!(beta_coeff(0, 1, &LAMBDA), 5.0);
        assert_eq!(beta_coeff(1, 0, &LAMBDA), -6.0);
    }

    #[test]
    fn gamma_edge_cases() {
        let top = Composition(vec![2, 0, 0]);
        assert_eq!(gamma_coeff(0, 2, &top, &LAMBDA).unwrap(), 1.0);
        assert!(gamma_coeff(1, 1, &top, &LAMBDA).is_err());
        assert!(gamma_coeff(0, 3, &top, &LAMBDA).is_err());
        assert!(gamma_coeff(0, 0, &top, &LAMBDA).is_err());
    }

    #[test]
    fn expansion_identity_at_fixed_t() {
        let comp = Composition(vec![1, 1, 0]);
        let terms = expand_lambda_power(&comp, &LAMBDA).unwrap();
        let t = 1.0;
        let value: f64 = terms
            .iter()
            .map(|term| {
                term.coeff
                    * stage_factor(term.stage, &t, &LAMBDA).powi(term.power as i32)
                    * LAMBDA[2].powi(2 - term.power as i32)
            })
            .sum();
        assert!((value - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            expand_lambda_power(&Composition(vec![0, 0, 2]), &LAMBDA),
            Err(Error::ConstantTerm)
        ));
    }

    #[test]
    fn expansion_identity_exact() {
        let lambda = vec![ratio(7, 1), ratio(3, 1), ratio(2, 1), ratio(1, 2)];
        let t = ratio(5, 3);
        for comp in enumerate_compositions(4, 3) {
            let Ok(terms) = expand_lambda_power(&comp, &lambda) else {
                continue;
            };
            let n = comp.total() as usize;
            let last = lambda[3].clone();
            let mut lhs = num_traits::pow(last.clone(), comp.reference_count() as usize);
            for k in 0..3 {
                lhs = lhs * num_traits::pow(stage_factor(k, &t, &lambda), comp.0[k] as usize);
            }
            let mut rhs = BigRational::zero();
            for term in terms {
                rhs = rhs
                    + term.coeff
                        * num_traits::pow(stage_factor(term.stage, &t, &lambda), term.power as usize)
                        * num_traits::pow(last.clone(), n - term.power as usize);
            }
            assert_eq!(lhs, rhs, "composition {:?}", comp.0);
        }
    }

    #[test]
    fn example_system_matches_published_form() {
        let e = build_eps(2, &LAMBDA);
        let text = dump_polys(&e, 2, 2);
        assert_eq!(
            text,
            "h11 = x11 + x21 + 5*x11*x22 + 5*x12*x21\n\
             h12 = x11*x21\n\
             h21 = x12 + x22 - 6*x11*x22 - 6*x12*x21\n\
             h22 = x12*x22\n"
        );
    }

    #[test]
    fn float_and_exact_constructions_agree() {
        let lam_f = [4.0, 2.5, 1.5, 0.5];
        let lam_q = vec![ratio(4, 1), ratio(5, 2), ratio(3, 2), ratio(1, 2)];
        let ef = build_eps(2, &lam_f);
        let eq = build_eps_exact(2, &lam_q);
        for (pf, pq) in ef.iter().zip(&eq) {
            let conv = pq.map_coeffs(|c| {
                let n: f64 = c.numer().to_string().parse().unwrap();
                let d: f64 = c.denom().to_string().parse().unwrap();
                n / d
            });
            assert_eq!(conv.num_terms(), pf.num_terms());
            for (e, c) in conv.terms() {
                let cf = pf.coeff(e).copied().unwrap_or(0.0);
                assert!((c - cf).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn degree_audit() {
        let e = build_eps(2, &[3.0, 1.0]);
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].total_degree(), 1);
        assert_eq!(e[1].total_degree(), 2);
        for p in build_eps(3, &[6.0, 4.0, 2.0, 1.0]) {
            assert!(p.total_degree() <= 3);
        }
    }

    #[test]
    fn overdetermined_rhs_matches_square_solve() {
        let w = [0.17, 0.80, 0.13, 0.47];
        let mixes = [
            GhMix::new(LAMBDA.to_vec(), vec![0.17, 0.80, 0.03]).unwrap(),
            GhMix::new(LAMBDA.to_vec(), vec![0.13, 0.47, 0.40]).unwrap(),
        ];
        let mgf = |t: f64| mixes[0].mgf(t).unwrap() * mixes[1].mgf(t).unwrap();
        let polys = build_eps(2, &LAMBDA);
        let exact: Vec<f64> = polys.iter().map(|p| p.eval(&w)).collect();
        for tau in [
            vec![1.9857, 2.3782, 0.3581, 8.8619],
            vec![0.1, 0.3, 0.7, 1.5, 3.0, 6.0, 12.0],
        ] {
            let m: Vec<f64> = tau.iter().map(|&t| mgf(t)).collect();
            let (u, _) = estimate_rhs(&tau, &m, None, 2, &LAMBDA, 1e12).unwrap();
            for (a, b) in u.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
        let m: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&t| mgf(t)).collect();
        assert!(estimate_rhs(&[0.5, 1.0, 2.0], &m, None, 2, &LAMBDA, 1e12).is_err());
    }

    #[test]
    fn single_link_system_is_linear() {
        let e = build_eps(1, &[6.0, 4.0, 2.0, 1.0]);
        for (k, p) in e.iter().enumerate() {
            assert_eq!(p.total_degree(), 1);
            assert_eq!(p.num_terms(), 1);
            let mut exps = vec![0; 3];
            exps[k] = 1;
            assert!(p.coeff(&exps).is_some());
        }
    }

    #[test]
    fn t_tau_examples() {
        let one = build_t_tau(&[2.0], 1, &[3.0, 1.0], DEFAULT_CONDITION_LIMIT).unwrap();
        assert!((one[(0, 0)] - 2.0 * 2.0 / 5.0).abs() < 1e-15);

        let tau = [1.9857, 2.3782, 0.3581, 8.8619];
        let m = build_t_tau(&tau, 2, &LAMBDA, DEFAULT_CONDITION_LIMIT).unwrap();
        let det = m.clone().lu().determinant();
        assert!(det.abs() > 1e-12, "determinant {det}");

        assert!(build_t_tau(&[1.0, 1.0, 2.0, 3.0], 2, &LAMBDA, DEFAULT_CONDITION_LIMIT).is_err());
        assert!(build_t_tau(&[1.0, 2.0], 2, &LAMBDA, DEFAULT_CONDITION_LIMIT).is_err());
        assert!(build_t_tau(&[1.0, -2.0, 3.0, 4.0], 2, &LAMBDA, DEFAULT_CONDITION_LIMIT).is_err());
    }

    #[test]
    fn assemble_closes_loop_with_exact_constants() {
        let w = [0.17, 0.80, 0.13, 0.47];
        let tau = [1.9857, 2.3782, 0.3581, 8.8619];
        let m = build_t_tau(&tau, 2, &LAMBDA, DEFAULT_CONDITION_LIMIT).unwrap();
        let c: Vec<f64> = tau
            .iter()
            .map(|&t| {
                let f = |a: f64, b: f64| a * 5.0 / (5.0 + t) + b * 3.0 / (3.0 + t) + (1.0 - a - b) / (1.0 + t);
                f(w[0], w[1]) * f(w[2], w[3]) * (1.0 + t).powi(2) - 1.0
            })
            .collect();
        let sys = assemble_system(build_eps(2, &LAMBDA), m, c, &LAMBDA).unwrap();
        assert!(sys.residual(&w).iter().all(|r| r.abs() < 1e-10));
        let swapped = [w[2], w[3], w[0], w[1]];
        assert!(sys.residual(&swapped).iter().all(|r| r.abs() < 1e-10));
    }
}
