//! Projective total-degree homotopy with the gamma trick.
//!
//! The target `P(x) = rhs` is homogenized with `x0` and tracked on the
//! random affine patch `a·X = 1`, so paths heading to infinity stay bounded
//! and end at points with `x0 ≈ 0`.

use num_complex::Complex64;
use num_traits::Zero;

use super::newton::norm;
use crate::linalg;
use crate::poly::CompiledSystem;

#[derive(Debug, Clone, Copy)]
pub(crate) struct TrackSettings {
    pub min_step: f64,
    pub max_step: f64,
    pub corrector_iters: usize,
    pub corrector_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PathEnd {
    /// Reached `s = 1` (or stalled near it) at a point with `x0` not small;
    /// carries the affine coordinates.
    Finite { x: Vec<Complex64>, stalled: bool },
    /// Endpoint lies on the hyperplane at infinity.
    AtInfinity,
    Failed(String),
}

pub(crate) struct Homotopy<'a> {
    target: &'a CompiledSystem,
    gamma: Complex64,
    patch: Vec<Complex64>,
    settings: TrackSettings,
}

/// Relative size of `x0` below which an endpoint counts as at infinity.
const INFINITY_RATIO: f64 = 1e-6;
/// Looser ratio used when tracking stalled close to `s = 1`.
const STALL_INFINITY_RATIO: f64 = 1e-2;

impl<'a> Homotopy<'a> {
    pub fn new(
        target: &'a CompiledSystem,
        gamma: Complex64,
        patch: Vec<Complex64>,
        settings: TrackSettings,
    ) -> Self {
        assert_eq!(patch.len(), target.n + 1);
        Homotopy {
            target,
            gamma,
            patch,
            settings,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.target.degrees.iter().map(|&d| d as usize).product()
    }

    /// Start point number `index`: `x_i` runs over the `d_i`-th roots of
    /// unity in mixed radix order, scaled onto the patch.
    pub fn start_point(&self, mut index: usize) -> Vec<Complex64> {
        let n = self.target.n;
        let mut v = Vec::with_capacity(n + 1);
        v.push(Complex64::new(1.0, 0.0));
        for &d in &self.target.degrees {
            let d = d as usize;
            let k = index % d;
            index /= d;
            let angle = 2.0 * std::f64::consts::PI * k as f64 / d as f64;
            v.push(Complex64::from_polar(1.0, angle));
        }
        let dot: Complex64 = self.patch.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter().map(|z| z / dot).collect()
    }

    /// `H(X, s)`, its Jacobian in `X` ((n+1) × (n+1), row-major) and `∂H/∂s`.
    fn eval(
        &self,
        xh: &[Complex64],
        s: f64,
        jac: &mut [Complex64],
        fjac: &mut [Complex64],
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.target.n;
        let cols = n + 1;
        let f = self.target.eval_homogeneous(xh, fjac);
        let mut h = vec![Complex64::zero(); cols];
        let mut hs = vec![Complex64::zero(); cols];
        let w0 = self.gamma * (1.0 - s);
        let x0 = xh[0];
        for i in 0..n {
            let d = self.target.degrees[i] as i32;
            let xi = xh[i + 1];
            let g = xi.powi(d) - x0.powi(d);
            h[i] = w0 * g + f[i] * s;
            hs[i] = f[i] - self.gamma * g;
            for c in 0..cols {
                jac[i * cols + c] = fjac[i * cols + c] * s;
            }
            let dd = d as f64;
            jac[i * cols + i + 1] += w0 * xi.powi(d - 1) * dd;
            jac[i * cols] -= w0 * x0.powi(d - 1) * dd;
        }
        let mut p = Complex64::new(-1.0, 0.0);
        for c in 0..cols {
            p += self.patch[c] * xh[c];
            jac[n * cols + c] = self.patch[c];
        }
        h[n] = p;
        (h, hs)
    }

    pub fn track(&self, start: Vec<Complex64>) -> PathEnd {
        let n = self.target.n;
        let cols = n + 1;
        let st = self.settings;
        let mut jac = vec![Complex64::zero(); cols * cols];
        let mut fjac = vec![Complex64::zero(); n * cols];
        let mut x = start;
        let mut s = 0.0f64;
        let mut h = st.max_step.min(0.01);
        let mut streak = 0;
        let mut stalled = false;

        while s < 1.0 {
            h = h.min(1.0 - s);
            let (_, hs) = self.eval(&x, s, &mut jac, &mut fjac);
            let rhs: Vec<Complex64> = hs.iter().map(|v| -v).collect();
            let Some(tangent) = linalg::solve_complex(cols, &jac, &rhs) else {
                if s > 0.9 {
                    stalled = true;
                    break;
                }
                return PathEnd::Failed(format!("singular Jacobian at s = {s:.6}"));
            };
            let s1 = if 1.0 - s - h < 1e-14 { 1.0 } else { s + h };
            let step = s1 - s;
            let mut y: Vec<Complex64> =
                x.iter().zip(&tangent).map(|(a, t)| a + t * step).collect();
            let mut converged = false;
            for it in 0..st.corrector_iters {
                let (hv, _) = self.eval(&y, s1, &mut jac, &mut fjac);
                let neg: Vec<Complex64> = hv.iter().map(|v| -v).collect();
                let Some(dx) = linalg::solve_complex(cols, &jac, &neg) else {
                    break;
                };
                let dn = norm(&dx);
                let scale = 1.0 + norm(&y);
                // A large first correction means the predictor left the basin.
                if it == 0 && dn > 0.1 * scale {
                    break;
                }
                for (yi, di) in y.iter_mut().zip(&dx) {
                    *yi += di;
                }
                if dn <= st.corrector_tol * scale {
                    converged = true;
                    break;
                }
            }
            if converged && y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                x = y;
                s = s1;
                streak += 1;
                if streak >= 3 {
                    h = (2.0 * h).min(st.max_step);
                    streak = 0;
                }
            } else {
                streak = 0;
                h *= 0.5;
                if h < st.min_step {
                    if s > 0.9 {
                        stalled = true;
                        break;
                    }
                    return PathEnd::Failed(format!("step size underflow at s = {s:.6}"));
                }
            }
        }

        let ratio = x[0].norm() / norm(&x[1..]).max(f64::MIN_POSITIVE);
        let limit = if stalled {
            STALL_INFINITY_RATIO
        } else {
            INFINITY_RATIO
        };
        if ratio < limit {
            return PathEnd::AtInfinity;
        }
        let affine = x[1..].iter().map(|z| z / x[0]).collect();
        PathEnd::Finite { x: affine, stalled }
    }
}
