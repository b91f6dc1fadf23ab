use num_complex::Complex64;
use num_traits::Zero;

use crate::linalg;
use crate::poly::{CompiledSystem, PolySystem};

/// Points whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Inverse condition number of the Jacobian below which a root is suspect.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// A refined root.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub x: Vec<Complex64>,
    /// Euclidean norm of `P(x) − rhs`.
    pub residual: f64,
    pub iterations: usize,
    /// Jacobian numerically singular at the root.
    pub suspect: bool,
}

/// Newton iteration gave up.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub x: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
    pub reason: &'static str,
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Scale against which a residual is judged: the largest of 1, `|rhs_i|`
/// and the sum of absolute term magnitudes at `x`.
pub(crate) fn residual_scale(sys: &PolySystem, x: &[Complex64]) -> f64 {
    let mut scale: f64 = 1.0;
    for (p, r) in sys.polys.iter().zip(&sys.rhs) {
        let mut s = r.abs();
        for (e, c) in p.terms() {
            let mut m = c.abs();
            for (v, &k) in e.iter().enumerate() {
                if k > 0 {
                    m *= x[v].norm().powi(k as i32);
                }
            }
            s += m;
        }
        scale = scale.max(s);
    }
    scale
}

/// Newton's method on `P(x) = rhs` from `x0`.
///
/// Converges when `‖P(x) − rhs‖ < tol · scale(x)`; a point that already
/// satisfies the bound is returned unchanged.
pub fn newton_refine(
    sys: &PolySystem,
    x0: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<Refined, Divergence> {
    let compiled = sys.compile();
    refine_compiled(sys, &compiled, x0, tol, max_iter)
}

pub(crate) fn refine_compiled(
    sys: &PolySystem,
    compiled: &CompiledSystem,
    x0: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<Refined, Divergence> {
    let n = compiled.n;
    let mut x = x0.to_vec();
    let mut jac = vec![Complex64::zero(); n * n];
    let mut iterations = 0;
    loop {
        let r = compiled.eval_affine(&x, &mut jac);
        let res = norm(&r);
        if !res.is_finite() {
            return Err(Divergence {
                x,
                residual: res,
                iterations,
                reason: "non-finite residual",
            });
        }
        if res < tol * residual_scale(sys, &x) {
            let suspect = linalg::inverse_condition_complex(n, &jac) < SINGULAR_RCOND;
            return Ok(Refined {
                x,
                residual: res,
                iterations,
                suspect,
            });
        }
        if iterations == max_iter {
            return Err(Divergence {
                x,
                residual: res,
                iterations,
                reason: "iteration cap reached",
            });
        }
        let neg: Vec<Complex64> = r.iter().map(|v| -v).collect();
        let Some(step) = linalg::solve_complex(n, &jac, &neg) else {
            return Err(Divergence {
                x,
                residual: res,
                iterations,
                reason: "singular Jacobian",
            });
        };
        for (xi, di) in x.iter_mut().zip(&step) {
            *xi += di;
        }
        iterations += 1;
        if norm(&x) > DIVERGENCE_NORM {
            return Err(Divergence {
                x,
                residual: f64::INFINITY,
                iterations,
                reason: "iterate escaped to infinity",
            });
        }
    }
}
