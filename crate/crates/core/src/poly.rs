//! Sparse multivariate polynomials and square polynomial systems.

use num_complex::Complex64;
use num_traits::Zero;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Polynomial stored as a map from exponent vectors to nonzero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoly<C = f64> {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, C>,
}

impl<C: Clone + Zero> SparsePoly<C> {
    pub fn zero(nvars: usize) -> Self {
        SparsePoly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: C) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &C)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), c))
    }

    pub fn coeff(&self, exps: &[u32]) -> Option<&C> {
        self.terms.get(exps)
    }

    /// Adds `c · x^exps`, merging with an existing term; zero results are dropped.
    pub fn add_term(&mut self, exps: Vec<u32>, c: C) {
        assert_eq!(exps.len(), self.nvars, "exponent vector length");
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&exps) {
            Some(existing) => {
                let sum = existing.clone() + c;
                if sum.is_zero() {
                    self.terms.remove(&exps);
                } else {
                    *existing = sum;
                }
            }
            None => {
                self.terms.insert(exps, c);
            }
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &SparsePoly<C>, scale: &C)
    where
        C: std::ops::Mul<Output = C>,
    {
        assert_eq!(self.nvars, other.nvars);
        for (e, c) in &other.terms {
            self.add_term(e.clone(), c.clone() * scale.clone());
        }
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn map_coeffs<D: Clone + Zero>(&self, f: impl Fn(&C) -> D) -> SparsePoly<D> {
        let mut out = SparsePoly::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), f(c));
        }
        out
    }

    /// Reorders variables: variable `v` of the result is variable `perm[v]` of `self`.
    pub fn permute_vars(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.nvars);
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            let ne = perm.iter().map(|&src| e[src]).collect();
            out.add_term(ne, c.clone());
        }
        out
    }
}

impl SparsePoly<f64> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, &c)| c * monomial(e, x))
            .sum()
    }

    pub fn eval_complex(&self, x: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, &c)| {
                let mut m = Complex64::new(c, 0.0);
                for (v, &p) in e.iter().enumerate() {
                    if p > 0 {
                        m *= x[v].powu(p);
                    }
                }
                m
            })
            .sum()
    }

    /// Writes the polynomial with the given variable names, terms in
    /// ascending degree, ties broken by descending exponent vector.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        PolyDisplay { poly: self, names }
    }
}

fn monomial(e: &[u32], x: &[f64]) -> f64 {
    e.iter()
        .zip(x)
        .filter(|(&p, _)| p > 0)
        .map(|(&p, &v)| v.powi(p as i32))
        .product()
}

struct PolyDisplay<'a> {
    poly: &'a SparsePoly<f64>,
    names: &'a [String],
}

impl fmt::Display for PolyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return write!(f, "0");
        }
        let mut terms: Vec<(&Vec<u32>, f64)> =
            self.poly.terms.iter().map(|(e, &c)| (e, c)).collect();
        terms.sort_by(|a, b| {
            let da: u32 = a.0.iter().sum();
            let db: u32 = b.0.iter().sum();
            da.cmp(&db).then_with(|| b.0.cmp(a.0))
        });
        for (i, (e, c)) in terms.iter().enumerate() {
            let vars: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0)
                .map(|(v, &p)| {
                    if p == 1 {
                        self.names[v].clone()
                    } else {
                        format!("{}^{}", self.names[v], p)
                    }
                })
                .collect();
            let mag = c.abs();
            if i == 0 {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
            } else if *c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if vars.is_empty() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{mag}*{}", vars.join("*"))?;
            }
        }
        Ok(())
    }
}

/// Square system `P(x) = rhs` whose variables come in blocks of `block`
/// consecutive coordinates; permuting whole blocks is expected to be a
/// symmetry of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    pub polys: Vec<SparsePoly<f64>>,
    pub rhs: Vec<f64>,
    pub block: usize,
}

impl PolySystem {
    pub fn new(polys: Vec<SparsePoly<f64>>, rhs: Vec<f64>, block: usize) -> Result<Self> {
        let n = polys.len();
        if n == 0 {
            return Err(Error::Dimension("empty polynomial system".into()));
        }
        if rhs.len() != n {
            return Err(Error::Dimension(format!(
                "{} equations but {} right-hand-side entries",
                n,
                rhs.len()
            )));
        }
        if let Some(p) = polys.iter().find(|p| p.nvars() != n) {
            return Err(Error::Dimension(format!(
                "system is not square: {} equations, polynomial in {} variables",
                n,
                p.nvars()
            )));
        }
        if block == 0 || n % block != 0 {
            return Err(Error::Dimension(format!(
                "block size {block} does not divide {n} variables"
            )));
        }
        Ok(PolySystem { polys, rhs, block })
    }

    pub fn dim(&self) -> usize {
        self.polys.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.dim() / self.block
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.polys.iter().map(SparsePoly::total_degree).collect()
    }

    /// Residual `P(x) - rhs` at a real point.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.polys
            .iter()
            .zip(&self.rhs)
            .map(|(p, r)| p.eval(x) - r)
            .collect()
    }

    pub fn residual_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.polys
            .iter()
            .zip(&self.rhs)
            .map(|(p, &r)| p.eval_complex(x) - r)
            .collect()
    }

    /// Same polynomials with a different right-hand side.
    pub fn with_rhs(&self, rhs: Vec<f64>) -> Result<Self> {
        PolySystem::new(self.polys.clone(), rhs, self.block)
    }

    pub(crate) fn compile(&self) -> CompiledSystem {
        CompiledSystem::new(self)
    }
}

/// Term list with per-polynomial degrees, for fast evaluation of value and
/// Jacobian at complex points, optionally homogenized with an extra
/// coordinate `x0`.
#[derive(Debug, Clone)]
pub(crate) struct CompiledSystem {
    pub n: usize,
    pub degrees: Vec<u32>,
    pub max_power: u32,
    terms: Vec<Vec<(f64, Vec<(usize, u32)>)>>,
    pub rhs: Vec<f64>,
}

impl CompiledSystem {
    fn new(sys: &PolySystem) -> Self {
        let degrees = sys.degrees();
        let terms: Vec<Vec<(f64, Vec<(usize, u32)>)>> = sys
            .polys
            .iter()
            .map(|p| {
                p.terms()
                    .map(|(e, &c)| {
                        let factors = e
                            .iter()
                            .enumerate()
                            .filter(|(_, &k)| k > 0)
                            .map(|(v, &k)| (v, k))
                            .collect();
                        (c, factors)
                    })
                    .collect()
            })
            .collect();
        let max_power = degrees.iter().copied().max().unwrap_or(1).max(1);
        CompiledSystem {
            n: sys.dim(),
            degrees,
            max_power,
            terms,
            rhs: sys.rhs.clone(),
        }
    }

    fn power_table(&self, x: &[Complex64]) -> Vec<Vec<Complex64>> {
        let m = self.max_power as usize;
        x.iter()
            .map(|&v| {
                let mut row = Vec::with_capacity(m + 1);
                row.push(Complex64::new(1.0, 0.0));
                for k in 1..=m {
                    let prev = row[k - 1];
                    row.push(prev * v);
                }
                row
            })
            .collect()
    }

    /// Values of `P(x) - rhs` and the Jacobian (row-major, n × n).
    pub fn eval_affine(&self, x: &[Complex64], jac: &mut [Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let pw = self.power_table(x);
        let mut vals = vec![Complex64::zero(); n];
        jac.iter_mut().for_each(|v| *v = Complex64::zero());
        for (i, terms) in self.terms.iter().enumerate() {
            let mut val = Complex64::new(-self.rhs[i], 0.0);
            for (c, factors) in terms {
                let mut m = Complex64::new(*c, 0.0);
                for &(v, k) in factors {
                    m *= pw[v][k as usize];
                }
                val += m;
                for (fi, &(v, k)) in factors.iter().enumerate() {
                    let mut d = Complex64::new(*c * k as f64, 0.0) * pw[v][k as usize - 1];
                    for (fj, &(w, kw)) in factors.iter().enumerate() {
                        if fj != fi {
                            d *= pw[w][kw as usize];
                        }
                    }
                    jac[i * n + v] += d;
                }
            }
            vals[i] = val;
        }
        vals
    }

    /// Homogenized `P^h(X) - rhs·x0^deg` at `X = (x0, x1..xn)`; Jacobian is
    /// n × (n+1), column 0 for `x0`.
    pub fn eval_homogeneous(&self, xh: &[Complex64], jac: &mut [Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let cols = n + 1;
        let x0 = xh[0];
        let x = &xh[1..];
        let pw = self.power_table(x);
        let mut p0 = Vec::with_capacity(self.max_power as usize + 1);
        p0.push(Complex64::new(1.0, 0.0));
        for k in 1..=self.max_power as usize {
            let prev = p0[k - 1];
            p0.push(prev * x0);
        }
        let mut vals = vec![Complex64::zero(); n];
        jac.iter_mut().for_each(|v| *v = Complex64::zero());
        for (i, terms) in self.terms.iter().enumerate() {
            let deg = self.degrees[i] as usize;
            let mut val = Complex64::new(-self.rhs[i], 0.0) * p0[deg];
            if deg > 0 {
                jac[i * cols] += Complex64::new(-self.rhs[i] * deg as f64, 0.0) * p0[deg - 1];
            }
            for (c, factors) in terms {
                let tdeg: usize = factors.iter().map(|&(_, k)| k as usize).sum();
                let e0 = deg - tdeg;
                let mut core = Complex64::new(*c, 0.0);
                for &(v, k) in factors {
                    core *= pw[v][k as usize];
                }
                val += core * p0[e0];
                if e0 > 0 {
                    jac[i * cols] += core * p0[e0 - 1] * e0 as f64;
                }
                for (fi, &(v, k)) in factors.iter().enumerate() {
                    let mut d = Complex64::new(*c * k as f64, 0.0) * pw[v][k as usize - 1];
                    for (fj, &(w, kw)) in factors.iter().enumerate() {
                        if fj != fi {
                            d *= pw[w][kw as usize];
                        }
                    }
                    jac[i * cols + 1 + v] += d * p0[e0];
                }
            }
            vals[i] = val;
        }
        vals
    }
}
