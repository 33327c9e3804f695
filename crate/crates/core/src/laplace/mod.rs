//! Inner optimization over designated random arguments and the adjusted
//! profile `p_w(h) = h(ŵ) + (dim w / 2) log 2π − ½ log|−H(ŵ)|`.

mod structured;

use nalgebra::DMatrix;

pub use structured::{logdet_structured, StructuredFactor};

use crate::adtape::{ChunkedPlan, ChunkedTape, Tape};
use crate::error::{Error, Result};
use crate::model::{record_h, GlmmSpec, ParamState, DEFAULT_CHUNKS, LN_2PI};

pub const DEFAULT_INNER_TOL: f64 = 1e-8;
pub const DEFAULT_INNER_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const STEP_FLOOR: f64 = 1e-13;

/// The objective restricted to `w`; every other input is frozen at the
/// value supplied to [`inner_newton`].
///
/// The first `n_diag` entries of `w` must form a diagonal Hessian block;
/// the remaining entries form a dense trailing block.
pub struct InnerProblem<'a> {
    tape: &'a ChunkedTape,
    plan: ChunkedPlan,
    n_diag: usize,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub w_hat: Vec<f64>,
    /// `h(ŵ)`.
    pub value: f64,
    pub logdet_neg_h: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Factorization of `−H(ŵ)` in `w` order.
    pub factor: StructuredFactor,
}

impl InnerSolution {
    /// `h(ŵ) + (dim w / 2) log 2π − ½ log|−H|`.
    pub fn adjusted_profile(&self) -> f64 {
        self.value + 0.5 * self.w_hat.len() as f64 * LN_2PI - 0.5 * self.logdet_neg_h
    }
}

impl<'a> InnerProblem<'a> {
    pub fn new(tape: &'a ChunkedTape, w: Vec<usize>, n_diag: usize) -> Result<Self> {
        if n_diag > w.len() {
            return Err(Error::Structure(format!("diagonal block {n_diag} exceeds dim w {}", w.len())));
        }
        let plan = tape.plan(&w)?;
        if let Some(&(i, j)) = plan.entries().iter().find(|&&(i, j)| i != j && j < n_diag) {
            return Err(Error::Structure(format!(
                "entry ({}, {}) couples two arguments of the diagonal block",
                w[i], w[j]
            )));
        }
        Ok(Self { tape, plan, n_diag })
    }

    pub fn w(&self) -> &[usize] {
        self.plan.w()
    }

    pub fn tape(&self) -> &ChunkedTape {
        self.tape
    }

    pub fn colors(&self) -> usize {
        self.plan.max_colors()
    }

    /// `−H` over `w`, factorized.
    fn factor(&self, hess: &[f64]) -> Result<StructuredFactor> {
        let nd = self.n_diag;
        let nt = self.w().len() - nd;
        let mut d = vec![0.0; nd];
        let mut c: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nd];
        let mut b = DMatrix::zeros(nt, nt);
        for (&(i, j), &h) in self.plan.entries().iter().zip(hess) {
            let v = -h;
            if j < nd {
                d[i] = v;
            } else if i < nd {
                c[i].push((j - nd, v));
            } else {
                b[(i - nd, j - nd)] = v;
                b[(j - nd, i - nd)] = v;
            }
        }
        StructuredFactor::new(d, c, b).map_err(|e| match e {
            Error::SchurNotPositiveDefinite => Error::IndefiniteInnerHessian,
            other => other,
        })
    }

    /// Value, gradient over `w`, and factorized `−H` at `x`.
    pub fn local(&self, x: &[f64]) -> Result<(f64, Vec<f64>, StructuredFactor)> {
        let (f, g, h) = self.tape.value_gradient_hessian(&self.plan, x)?;
        let gw = self.w().iter().map(|&k| g[k]).collect();
        Ok((f, gw, self.factor(&h)?))
    }
}

/// Newton ascent in `w` from the values stored in `x`, with step halving.
/// On success `x` holds `ŵ` in the `w` slots.
pub fn inner_newton(
    problem: &InnerProblem<'_>,
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolution> {
    let w = problem.w().to_vec();
    let mut trial = x.to_vec();
    let mut last_norm = f64::INFINITY;
    for iter in 0..=max_iter {
        let (f, g, factor) = problem.local(x)?;
        let grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_norm <= tol {
            return Ok(InnerSolution {
                w_hat: w.iter().map(|&k| x[k]).collect(),
                value: f,
                logdet_neg_h: factor.logdet(),
                iterations: iter,
                grad_norm,
                factor,
            });
        }
        last_norm = grad_norm;
        if iter == max_iter {
            break;
        }
        let step = factor.solve(&g);
        // A gradient at the rounding floor of a long sum yields a
        // negligible step; ŵ is then as accurate as it can get.
        let tiny = w
            .iter()
            .zip(&step)
            .all(|(&k, s)| s.abs() <= STEP_FLOOR * (1.0 + x[k].abs()));
        if tiny {
            return Ok(InnerSolution {
                w_hat: w.iter().map(|&k| x[k]).collect(),
                value: f,
                logdet_neg_h: factor.logdet(),
                iterations: iter,
                grad_norm,
                factor,
            });
        }
        let slack = 1e-12 * (1.0 + f.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for (k, &idx) in w.iter().enumerate() {
                trial[idx] = x[idx] + t * step[k];
            }
            if let Ok(fv) = problem.tape().value(&trial) {
                if fv >= f - slack {
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::InnerNoConvergence {
                iterations: iter,
                grad_norm,
            });
        }
        for &idx in &w {
            x[idx] = trial[idx];
        }
    }
    Err(Error::InnerNoConvergence {
        iterations: max_iter,
        grad_norm: last_norm,
    })
}

/// `p_w(h)` of the problem, starting the inner search from `x`.
pub fn adjusted_profile(problem: &InnerProblem<'_>, x: &mut [f64]) -> Result<f64> {
    Ok(inner_newton(problem, x, DEFAULT_INNER_TOL, DEFAULT_INNER_MAX_ITER)?.adjusted_profile())
}

/// Which parameters are integrated out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Designated {
    /// `w = u`: the marginal likelihood.
    RandomEffects,
    /// `w = (u, β)`: the restricted likelihood.
    RandomAndFixed,
}

/// Inner arguments for a designation, diagonal block first:
/// `[u1 | u2 | β]`.
pub fn designated_indices(spec: &GlmmSpec, which: Designated) -> (Vec<usize>, usize) {
    let l = spec.layout();
    let mut w: Vec<usize> = l.u1().chain(l.u2()).collect();
    if which == Designated::RandomAndFixed {
        w.extend(l.beta());
    }
    (w, l.q1)
}

/// Records a single-tape objective as a one-part chunked tape.
pub fn single(tape: Tape) -> Result<ChunkedTape> {
    ChunkedTape::new(vec![tape])
}

/// Laplace approximation of `log ∫ exp(h) dw` at the non-random values in
/// `params`; the random values in `params` are the inner starting point.
pub fn laplace_marginal_loglik(spec: &GlmmSpec, params: &ParamState, which: Designated) -> Result<f64> {
    let layout = spec.layout();
    let mut x = params.pack(&layout);
    let tape = record_h(spec, &x, DEFAULT_CHUNKS)?;
    let (w, nd) = designated_indices(spec, which);
    let problem = InnerProblem::new(&tape, w, nd)?;
    adjusted_profile(&problem, &mut x)
}
