//! Box-constrained quasi-Newton maximization with finite-difference
//! gradients, and finite-difference Hessians for standard errors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterOptions {
    pub max_iter: usize,
    /// Projected gradient ∞-norm.
    pub grad_tol: f64,
    /// Absolute objective change.
    pub f_tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-5,
            f_tol: 1e-8,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[k], self.upper[k]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterResult {
    pub x: Vec<f64>,
    /// Maximized objective.
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    /// Negated objective; failures become +∞.
    fn neg(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        match (self.f)(x) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    }

    fn gradient(&mut self, x: &[f64], fx: f64, bounds: &Bounds, rel: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            let h = rel * x[k].abs().max(1.0);
            let up = x[k] + h <= bounds.upper[k];
            let down = x[k] - h >= bounds.lower[k];
            probe[k] = x[k] + h;
            let fp = if up { self.neg(&probe) } else { f64::INFINITY };
            probe[k] = x[k] - h;
            let fm = if down { self.neg(&probe) } else { f64::INFINITY };
            probe[k] = x[k];
            g[k] = match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => {
                    return Err(Error::OuterNoConvergence {
                        iterations: 0,
                        grad_norm: f64::NAN,
                        objective: -fx,
                    })
                }
            };
        }
        Ok(g)
    }
}

/// Gradient components that can still move the iterate inside the box.
fn projected_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(k, (&xk, &gk))| {
            let at_lo = xk <= bounds.lower[k] && gk > 0.0;
            let at_hi = xk >= bounds.upper[k] && gk < 0.0;
            if at_lo || at_hi {
                0.0
            } else {
                gk.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Maximizes `f` over the box by projected BFGS with Armijo backtracking.
/// Failed evaluations count as `-∞`.
pub fn maximize<F>(f: F, x0: &[f64], bounds: &Bounds, opts: &OuterOptions) -> Result<OuterResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    maximize_with(f, x0, bounds, opts, None)
}

/// [`maximize`] with an inverse-Hessian estimate of `-f` for the leading
/// coordinates, e.g. a covariance approximation. The remaining
/// coordinates start from the gradient scale.
pub fn maximize_with<F>(
    f: F,
    x0: &[f64],
    bounds: &Bounds,
    opts: &OuterOptions,
    leading: Option<DMatrix<f64>>,
) -> Result<OuterResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut obj = Counted { f, evaluations: 0 };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    obj.evaluations += 1;
    let mut fx = -(obj.f)(&x)?;
    if n == 0 {
        return Ok(OuterResult {
            x,
            value: -fx,
            iterations: 0,
            grad_norm: 0.0,
            evaluations: obj.evaluations,
        });
    }
    let mut g = obj.gradient(&x, fx, bounds, opts.fd_step)?;
    let gscale = |g: &[f64]| 1.0 / g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut hinv = DMatrix::identity(n, n) * gscale(&g);
    let seeded = match leading {
        Some(h) if h.nrows() == h.ncols() && h.nrows() <= n => {
            let k = h.nrows();
            hinv.view_mut((0, 0), (k, k)).copy_from(&h);
            let rest = gscale(&g[k..]);
            for j in k..n {
                hinv[(j, j)] = rest;
            }
            true
        }
        _ => false,
    };
    let mut last_change = f64::INFINITY;
    let mut resets = 0;

    for iter in 0..opts.max_iter {
        let pg = projected_norm(&x, &g, bounds);
        if pg <= opts.grad_tol && last_change <= opts.f_tol {
            return Ok(OuterResult {
                x,
                value: -fx,
                iterations: iter,
                grad_norm: pg,
                evaluations: obj.evaluations,
            });
        }
        // Freeze coordinates pinned at a bound with the gradient pushing out.
        let free: Vec<bool> = (0..n)
            .map(|k| !((x[k] <= bounds.lower[k] && g[k] > 0.0) || (x[k] >= bounds.upper[k] && g[k] < 0.0)))
            .collect();
        let gv = DVector::from_iterator(n, (0..n).map(|k| if free[k] { g[k] } else { 0.0 }));
        let mut d = -(&hinv * &gv);
        for k in 0..n {
            if !free[k] {
                d[k] = 0.0;
            }
        }
        if d.dot(&gv) >= 0.0 {
            d = -gv.clone();
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = (0..n).map(|k| x[k] + t * d[k]).collect();
            bounds.project(&mut trial);
            let ft = obj.neg(&trial);
            let decrease: f64 = (0..n).map(|k| g[k] * (trial[k] - x[k])).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if pg <= 10.0 * opts.grad_tol {
                // Stalled at the noise floor of the finite differences.
                return Ok(OuterResult {
                    x,
                    value: -fx,
                    iterations: iter,
                    grad_norm: pg,
                    evaluations: obj.evaluations,
                });
            }
            if resets < 2 {
                resets += 1;
                hinv = DMatrix::identity(n, n) * gscale(&g);
                continue;
            }
            return Err(Error::OuterNoConvergence {
                iterations: iter,
                grad_norm: pg,
                objective: -fx,
            });
        };
        let gn = obj.gradient(&xn, fnew, bounds, opts.fd_step)?;
        let s = DVector::from_iterator(n, (0..n).map(|k| xn[k] - x[k]));
        let y = DVector::from_iterator(n, (0..n).map(|k| gn[k] - g[k]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if (iter == 0 && !seeded) || resets > 0 {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                resets = 0;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        last_change = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gn;
    }
    Err(Error::OuterNoConvergence {
        iterations: opts.max_iter,
        grad_norm: projected_norm(&x, &g, bounds),
        objective: -fx,
    })
}

/// Central differences of the central-difference gradient, i.e. the
/// four-point formula, with per-coordinate steps. Symmetric by
/// construction.
pub fn fd_hessian<F>(mut f: F, x: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x.len();
    let f0 = f(x)?;
    let mut h = DMatrix::zeros(n, n);
    let mut p = x.to_vec();
    for i in 0..n {
        let hi = steps[i];
        p[i] = x[i] + 2.0 * hi;
        let fp = f(&p)?;
        p[i] = x[i] - 2.0 * hi;
        let fm = f(&p)?;
        p[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (4.0 * hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut eval = |a: f64, b: f64| {
                p[i] = x[i] + a * hi;
                p[j] = x[j] + b * hj;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// `(−H)⁻¹` for a maximized objective; fails unless `−H` is positive
/// definite.
pub fn covariance_from_hessian(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let info = -h;
    let chol = nalgebra::Cholesky::new(info).ok_or(Error::NotInterior)?;
    let cov = chol.inverse();
    if cov.diagonal().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NotInterior);
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok(-(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)));
        let r = maximize(f, &[-1.2, 1.0], &Bounds::unbounded(2), &OuterOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Ok(-(x[0] - 3.0).powi(2) - (x[1] + 1.0).powi(2));
        let b = Bounds {
            lower: vec![-10.0, 0.0],
            upper: vec![2.0, 10.0],
        };
        let r = maximize(f, &[0.0, 5.0], &b, &OuterOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-12 && r.x[1].abs() < 1e-12, "{:?}", r.x);
    }

    #[test]
    fn failed_evaluations_are_avoided() {
        let f = |x: &[f64]| {
            if x[0] > 1.5 {
                Err(Error::NotInterior)
            } else {
                Ok(-(x[0] - 1.0).powi(2))
            }
        };
        let r = maximize(f, &[-5.0], &Bounds::unbounded(1), &OuterOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_standard_error() {
        let (a, v) = (0.7, 0.3);
        let f = |x: &[f64]| Ok(-(x[0] - a).powi(2) / (2.0 * v));
        let h = fd_hessian(f, &[a], &[1e-4]).unwrap();
        let cov = covariance_from_hessian(&h).unwrap();
        assert!((cov[(0, 0)].sqrt() - v.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn saddle_is_not_interior() {
        let f = |x: &[f64]| Ok(x[0] * x[0] - x[1] * x[1]);
        let h = fd_hessian(f, &[0.0, 0.0], &[1e-3, 1e-3]).unwrap();
        assert!(matches!(covariance_from_hessian(&h), Err(Error::NotInterior)));
    }
}
