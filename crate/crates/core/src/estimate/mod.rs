//! Estimation workflows: two-stage and one-stage h-likelihood fits,
//! marginal maximum likelihood, adaptive quadrature, standard errors and
//! random-effect refinement.
//!
//! Variance components are optimized as log standard deviations (or raw
//! standard deviations on request) with a finite-difference quasi-Newton
//! outer loop; the inner problems are solved by Newton's method on the
//! recorded `h`.

mod glm;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub use glm::{glm_fit, GlmFit};

use crate::adtape::ChunkedTape;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::laplace::{designated_indices, inner_newton, Designated, InnerProblem, InnerSolution};
use crate::model::{record_h, GlmmSpec, Layout, DEFAULT_CHUNKS};
use crate::optim::{covariance_from_hessian, fd_hessian, maximize, maximize_with, Bounds, OuterOptions, OuterResult};
use crate::quadrature::{agh_marginal, gh_nodes, Groups};

pub const SCHEMA_VERSION: u32 = 1;

/// Outer search box for standard deviations.
pub const SD_BOUNDS: (f64, f64) = (1e-8, 1e3);
const LOG_PHI_BOUNDS: (f64, f64) = (-30.0, 30.0);
/// Finite-difference steps for observed information.
pub const SE_STEP_LOG_SD: f64 = 1e-4;
pub const SE_STEP_BETA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    Hl11,
    Hl01,
    Mle,
    /// Adaptive Gauss-Hermite with `m ≥ 1` nodes.
    Agh(usize),
    /// Laplace over `u` with `β` at the joint mode of `h`.
    Agh0,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Hl11 => write!(f, "HL11"),
            Method::Hl01 => write!(f, "HL01"),
            Method::Mle => write!(f, "MLE"),
            Method::Agh(m) => write!(f, "AGH{m}"),
            Method::Agh0 => write!(f, "AGH0"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        match up.as_str() {
            "HL11" | "HL(1,1)" => Ok(Method::Hl11),
            "HL01" | "HL(0,1)" => Ok(Method::Hl01),
            "MLE" | "LA" => Ok(Method::Mle),
            "AGH0" => Ok(Method::Agh0),
            _ => up
                .strip_prefix("AGH")
                .and_then(|m| m.parse::<usize>().ok())
                .map(|m| if m == 0 { Method::Agh0 } else { Method::Agh(m) })
                .ok_or_else(|| Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl JsonSchema for Method {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "Method".into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> schemars::Schema {
        schemars::json_schema!({
            "type": "string",
            "pattern": "^(HL11|HL01|MLE|AGH[0-9]+)$"
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Scale on which the outer optimizer moves standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SdScale {
    #[default]
    Log,
    /// Bound-constrained raw standard deviations.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    pub outer_grad_tol: f64,
    pub outer_f_tol: f64,
    pub sd_scale: SdScale,
    pub standard_errors: bool,
    /// Standard deviations below this are reported as 0.
    pub boundary: f64,
    pub chunks: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        let o = OuterOptions::default();
        Self {
            inner_tol: 1e-10,
            inner_max_iter: 100,
            outer_max_iter: o.max_iter,
            outer_grad_tol: o.grad_tol,
            outer_f_tol: o.f_tol,
            sd_scale: SdScale::Log,
            standard_errors: true,
            boundary: 1e-4,
            chunks: DEFAULT_CHUNKS,
        }
    }
}

impl FitOptions {
    fn outer(&self) -> OuterOptions {
        OuterOptions {
            max_iter: self.outer_max_iter,
            grad_tol: self.outer_grad_tol,
            f_tol: self.outer_f_tol,
            ..OuterOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StageDiagnostics {
    pub stage: String,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub evaluations: usize,
}

impl StageDiagnostics {
    fn new(stage: &str, r: &OuterResult) -> Self {
        Self {
            stage: stage.into(),
            objective: r.value,
            iterations: r.iterations,
            grad_norm: r.grad_norm,
            evaluations: r.evaluations,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Timings {
    pub tape_build: f64,
    pub stage1: f64,
    pub stage2: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FitResult {
    pub schema_version: u32,
    pub method: Method,
    pub family: Family,
    pub n_obs: usize,
    pub q1: usize,
    pub q2: usize,
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    /// `None` when not computed.
    pub se_beta: Vec<Option<f64>>,
    /// Row-major `p x p` covariance of `β̂` when standard errors ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_covariance: Option<Vec<f64>>,
    /// Reported standard deviations; 0 at the boundary.
    pub sigma: Vec<f64>,
    pub se_sigma: Vec<Option<f64>>,
    pub boundary: Vec<bool>,
    /// Optimizer value of `log σ`, kept for refinement and restarts.
    pub log_sd: Vec<f64>,
    /// Residual variance for Gaussian responses.
    pub phi: Option<f64>,
    pub se_phi: Option<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub stages: Vec<StageDiagnostics>,
    pub timings: Timings,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Equality of every field except timings.
    pub fn same_estimates(&self, other: &FitResult) -> bool {
        let mut a = self.clone();
        a.timings = other.timings;
        &a == other
    }

    fn set_beta_covariance(&mut self, cov: &DMatrix<f64>) {
        let p = cov.nrows();
        self.se_beta = (0..p).map(|k| Some(cov[(k, k)].sqrt())).collect();
        self.beta_covariance = Some((0..p * p).map(|k| cov[(k / p, k % p)]).collect());
    }

    pub fn beta_covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let p = self.beta.len();
        self.beta_covariance
            .as_ref()
            .filter(|v| v.len() == p * p)
            .map(|v| DMatrix::from_row_slice(p, p, v))
    }
}

/// Inverts the finite-difference observed information of `f` at `x`.
/// Fails with [`Error::NotInterior`] unless it is positive definite.
pub fn standard_errors<F>(f: F, x: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    covariance_from_hessian(&fd_hessian(f, x, steps)?)
}

/// Shared state for one model: the recorded tape, the packed start and
/// the variance-parameter slots `[log_sd.. | log_phi]`.
struct Engine<'a> {
    spec: &'a GlmmSpec,
    layout: Layout,
    tape: ChunkedTape,
    opts: FitOptions,
    init: Vec<f64>,
    vars: Vec<usize>,
    tape_seconds: f64,
}

impl<'a> Engine<'a> {
    fn new(spec: &'a GlmmSpec, opts: &FitOptions) -> Result<Self> {
        check_levels(spec)?;
        let layout = spec.layout();
        let glm = glm_fit(spec.family, &spec.dataset)?;
        let mut init = vec![0.0; layout.n()];
        init[layout.beta()].copy_from_slice(&glm.beta);
        if let Some(k) = layout.log_phi() {
            init[k] = glm.phi.ln();
        }
        let t = Instant::now();
        let tape = record_h(spec, &init, opts.chunks)?;
        let tape_seconds = t.elapsed().as_secs_f64();
        let vars = layout.log_sd().chain(layout.log_phi()).collect();
        Ok(Self {
            spec,
            layout,
            tape,
            opts: *opts,
            init,
            vars,
            tape_seconds,
        })
    }

    fn problem(&self, which: Designated) -> Result<InnerProblem<'_>> {
        let (w, nd) = designated_indices(self.spec, which);
        InnerProblem::new(&self.tape, w, nd)
    }

    fn is_sd(&self, j: usize) -> bool {
        j < self.layout.r
    }

    fn var_bounds(&self) -> Bounds {
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..self.vars.len())
            .map(|j| match (self.is_sd(j), self.opts.sd_scale) {
                (true, SdScale::Log) => (SD_BOUNDS.0.ln(), SD_BOUNDS.1.ln()),
                (true, SdScale::Raw) => SD_BOUNDS,
                (false, _) => LOG_PHI_BOUNDS,
            })
            .unzip();
        Bounds { lower: lo, upper: hi }
    }

    /// Optimizer coordinates of the variance parameters stored in `x`.
    fn vars_to_outer(&self, x: &[f64]) -> Vec<f64> {
        self.vars
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                if self.is_sd(j) && self.opts.sd_scale == SdScale::Raw {
                    x[k].exp()
                } else {
                    x[k]
                }
            })
            .collect()
    }

    fn set_vars(&self, x: &mut [f64], t: &[f64]) {
        for (j, &k) in self.vars.iter().enumerate() {
            x[k] = if self.is_sd(j) && self.opts.sd_scale == SdScale::Raw {
                t[j].ln()
            } else {
                t[j]
            };
        }
    }

    /// Inner solve at the non-`w` values of `x`, warm-started from
    /// `anchor`; a failed warm start is retried from the initial point.
    fn solve(&self, problem: &InnerProblem<'_>, x: &mut [f64], anchor: &mut [f64]) -> Result<InnerSolution> {
        let w = problem.w();
        for &k in w {
            x[k] = anchor[k];
        }
        let first = inner_newton(problem, x, self.opts.inner_tol, self.opts.inner_max_iter);
        let sol = match first {
            Ok(s) => s,
            Err(_) => {
                for &k in w {
                    x[k] = self.init[k];
                }
                inner_newton(problem, x, self.opts.inner_tol, self.opts.inner_max_iter)?
            }
        };
        for &k in w {
            anchor[k] = x[k];
        }
        Ok(sol)
    }

    fn boundary_flags(&self, x: &[f64]) -> Vec<bool> {
        self.layout.log_sd().map(|k| x[k].exp() < self.opts.boundary).collect()
    }

    /// Covariance of the variance parameters on the log scale, skipping
    /// boundary components. Returns `(active slots, covariance)`.
    fn var_covariance<F>(&self, mut f: F, x: &[f64]) -> Result<(Vec<usize>, DMatrix<f64>)>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let flags = self.boundary_flags(x);
        let active: Vec<usize> = (0..self.vars.len()).filter(|&j| !(self.is_sd(j) && flags[j])).collect();
        let at: Vec<f64> = active.iter().map(|&j| x[self.vars[j]]).collect();
        let steps = vec![SE_STEP_LOG_SD; active.len()];
        let mut full = x.to_vec();
        let cov = standard_errors(
            |t| {
                for (a, &j) in active.iter().enumerate() {
                    full[self.vars[j]] = t[a];
                }
                f(&full)
            },
            &at,
            &steps,
        )?;
        Ok((active, cov))
    }

    fn result(&self, method: Method, x: &[f64]) -> FitResult {
        let l = &self.layout;
        let flags = self.boundary_flags(x);
        let log_sd = x[l.log_sd()].to_vec();
        FitResult {
            schema_version: SCHEMA_VERSION,
            method,
            family: self.spec.family,
            n_obs: self.spec.dataset.n(),
            q1: l.q1,
            q2: l.q2,
            column_names: self.spec.dataset.column_names.clone(),
            beta: x[l.beta()].to_vec(),
            se_beta: vec![None; l.p],
            beta_covariance: None,
            sigma: log_sd
                .iter()
                .zip(&flags)
                .map(|(v, &b)| if b { 0.0 } else { v.exp() })
                .collect(),
            se_sigma: vec![None; l.r],
            boundary: flags,
            log_sd,
            phi: l.log_phi().map(|k| x[k].exp()),
            se_phi: None,
            u1: x[l.u1()].to_vec(),
            u2: x[l.u2()].to_vec(),
            stages: Vec::new(),
            timings: Timings {
                tape_build: self.tape_seconds,
                ..Timings::default()
            },
            warnings: Vec::new(),
        }
    }

    fn apply_var_covariance(&self, fit: &mut FitResult, active: &[usize], cov: &DMatrix<f64>) {
        for (a, &j) in active.iter().enumerate() {
            let se_log = cov[(a, a)].sqrt();
            if self.is_sd(j) {
                fit.se_sigma[j] = Some(fit.sigma[j] * se_log);
            } else if let Some(phi) = fit.phi {
                fit.se_phi = Some(phi * se_log);
            }
        }
    }

    /// Maximizes `p_{β,u}(h)` over the variance parameters. Returns the
    /// packed optimum with `(û, β̂)` from the final inner solve.
    fn reml(&self, anchor: &mut [f64]) -> Result<(OuterResult, Vec<f64>, InnerSolution)> {
        let problem = self.problem(Designated::RandomAndFixed)?;
        let mut x = self.init.clone();
        let res = maximize(
            |t| {
                self.set_vars(&mut x, t);
                self.solve(&problem, &mut x, anchor).map(|s| s.adjusted_profile())
            },
            &self.vars_to_outer(&self.init),
            &self.var_bounds(),
            &self.opts.outer(),
        )?;
        let mut x = self.init.clone();
        self.set_vars(&mut x, &res.x);
        let sol = self.solve(&problem, &mut x, anchor)?;
        Ok((res, x, sol))
    }

    fn reml_objective(&self, anchor: &[f64]) -> Result<impl FnMut(&[f64]) -> Result<f64> + '_> {
        let problem = self.problem(Designated::RandomAndFixed)?;
        let mut anchor = anchor.to_vec();
        Ok(move |x: &[f64]| {
            let mut y = x.to_vec();
            self.solve(&problem, &mut y, &mut anchor).map(|s| s.adjusted_profile())
        })
    }

    /// Maximizes `p_u(h)` over `β` with the variance parameters of `x`
    /// fixed, starting from the `β` in `x`.
    fn fixed_effects(
        &self,
        x: &[f64],
        anchor: &mut [f64],
        metric: Option<DMatrix<f64>>,
    ) -> Result<(OuterResult, Vec<f64>)> {
        let problem = self.problem(Designated::RandomEffects)?;
        let beta = self.layout.beta();
        let mut y = x.to_vec();
        let res = maximize_with(
            |b| {
                y[beta.clone()].copy_from_slice(b);
                self.solve(&problem, &mut y, anchor).map(|s| s.adjusted_profile())
            },
            &x[beta.clone()],
            &Bounds::unbounded(self.layout.p),
            &self.opts.outer(),
            metric,
        )?;
        let mut y = x.to_vec();
        y[beta].copy_from_slice(&res.x);
        self.solve(&problem, &mut y, anchor)?;
        Ok((res, y))
    }

    /// Starting inverse Hessian for the `β` coordinates of `[β | vars]`:
    /// the β-block of the joint mode's inverse curvature at the initial
    /// point.
    fn joint_metric(&self) -> Option<DMatrix<f64>> {
        let problem = self.problem(Designated::RandomAndFixed).ok()?;
        let mut x = self.init.clone();
        let mut anchor = self.init.clone();
        let sol = self.solve(&problem, &mut x, &mut anchor).ok()?;
        Some(beta_block(&sol, self.layout.q2, self.layout.p))
    }

    fn marginal_objective(&self, anchor: &[f64]) -> Result<impl FnMut(&[f64]) -> Result<f64> + '_> {
        let problem = self.problem(Designated::RandomEffects)?;
        let mut anchor = anchor.to_vec();
        Ok(move |x: &[f64]| {
            let mut y = x.to_vec();
            self.solve(&problem, &mut y, &mut anchor).map(|s| s.adjusted_profile())
        })
    }

    /// Optimizer coordinates `[β | vars]`.
    fn joint_to_outer(&self, x: &[f64]) -> Vec<f64> {
        let mut t = x[self.layout.beta()].to_vec();
        t.extend(self.vars_to_outer(x));
        t
    }

    fn joint_bounds(&self) -> Bounds {
        let p = self.layout.p;
        let mut b = Bounds::unbounded(p);
        let v = self.var_bounds();
        b.lower.extend(v.lower);
        b.upper.extend(v.upper);
        b
    }

    fn set_joint(&self, x: &mut [f64], t: &[f64]) {
        let p = self.layout.p;
        x[..p].copy_from_slice(&t[..p]);
        self.set_vars(x, &t[p..]);
    }

    /// Covariance over `[β | active vars]` (log scale) of `f`.
    fn joint_covariance<F>(&self, mut f: F, x: &[f64]) -> Result<(Vec<usize>, DMatrix<f64>)>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let p = self.layout.p;
        let flags = self.boundary_flags(x);
        let active: Vec<usize> = (0..self.vars.len()).filter(|&j| !(self.is_sd(j) && flags[j])).collect();
        let mut at = x[..p].to_vec();
        at.extend(active.iter().map(|&j| x[self.vars[j]]));
        let mut steps = vec![SE_STEP_BETA; p];
        steps.extend(vec![SE_STEP_LOG_SD; active.len()]);
        let mut full = x.to_vec();
        let cov = standard_errors(
            |t| {
                full[..p].copy_from_slice(&t[..p]);
                for (a, &j) in active.iter().enumerate() {
                    full[self.vars[j]] = t[p + a];
                }
                f(&full)
            },
            &at,
            &steps,
        )?;
        Ok((active, cov))
    }

    fn apply_joint_covariance(&self, fit: &mut FitResult, active: &[usize], cov: &DMatrix<f64>) {
        let p = self.layout.p;
        for k in 0..p {
            fit.se_beta[k] = Some(cov[(k, k)].sqrt());
        }
        fit.set_beta_covariance(&cov.view((0, 0), (p, p)).into_owned());
        let sub = cov.view((p, p), (active.len(), active.len())).into_owned();
        self.apply_var_covariance(fit, active, &sub);
    }
}

fn check_levels(spec: &GlmmSpec) -> Result<()> {
    let d = &spec.dataset;
    if d.q1 < 2 || (d.group2.is_some() && d.q2 < 2) {
        return Err(Error::Data("every random-effect factor needs at least 2 levels".into()));
    }
    Ok(())
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// β-block of the inverse of `−H` over `w = [u1 | u2 | β]`.
fn beta_block(sol: &InnerSolution, q2: usize, p: usize) -> DMatrix<f64> {
    sol.factor.trailing_inverse().view((q2, q2), (p, p)).into_owned()
}


fn se_warning(fit: &mut FitResult, what: &str, e: &Error) {
    fit.warnings.push(format!("{what} standard errors unavailable: {e}"));
}

/// Runs stage 1 once and returns `(HL11, HL01)`.
pub fn fit_hl_pair(spec: &GlmmSpec, opts: &FitOptions) -> Result<(FitResult, FitResult)> {
    let eng = Engine::new(spec, opts)?;
    let l = eng.layout;
    let mut anchor = eng.init.clone();
    let t1 = Instant::now();
    let (res1, x1, sol1) = eng.reml(&mut anchor)?;
    let stage1_secs = seconds_since(t1);

    let mut hl01 = eng.result(Method::Hl01, &x1);
    hl01.stages.push(StageDiagnostics::new("restricted", &res1));
    hl01.timings.stage1 = stage1_secs;

    let mut stage1_cov = None;
    if opts.standard_errors {
        let t = Instant::now();
        let f = eng.reml_objective(&anchor)?;
        match eng.var_covariance(f, &x1) {
            Ok(c) => stage1_cov = Some(c),
            Err(e) => se_warning(&mut hl01, "variance-component", &e),
        }
        hl01.set_beta_covariance(&beta_block(&sol1, l.q2, l.p));
        hl01.timings.uncertainty = seconds_since(t);
        if let Some((active, cov)) = &stage1_cov {
            eng.apply_var_covariance(&mut hl01, active, cov);
        }
    }

    let t2 = Instant::now();
    let mut anchor2 = x1.clone();
    let metric = beta_block(&sol1, l.q2, l.p);
    let (res2, x2) = eng.fixed_effects(&x1, &mut anchor2, Some(metric))?;
    let mut hl11 = eng.result(Method::Hl11, &x2);
    hl11.stages.push(StageDiagnostics::new("restricted", &res1));
    hl11.stages.push(StageDiagnostics::new("fixed", &res2));
    hl11.timings.stage1 = stage1_secs;
    hl11.timings.stage2 = seconds_since(t2);
    hl11.warnings = hl01.warnings.clone();

    if opts.standard_errors {
        let t = Instant::now();
        if let Some((active, cov)) = &stage1_cov {
            eng.apply_var_covariance(&mut hl11, active, cov);
        }
        let problem = eng.problem(Designated::RandomEffects)?;
        let beta = l.beta();
        let mut y = x2.clone();
        let mut a = x2.clone();
        let cov = standard_errors(
            |b| {
                y[beta.clone()].copy_from_slice(b);
                eng.solve(&problem, &mut y, &mut a).map(|s| s.adjusted_profile())
            },
            &x2[l.beta()],
            &vec![SE_STEP_BETA; l.p],
        );
        match cov {
            Ok(c) => hl11.set_beta_covariance(&c),
            Err(e) => se_warning(&mut hl11, "fixed-effect", &e),
        }
        hl11.timings.uncertainty = hl01.timings.uncertainty + seconds_since(t);
    }
    Ok((hl11, hl01))
}

/// Two-stage fit: restricted likelihood `p_{β,u}(h)` for the variance
/// components, then `p_u(h)` for `β` at the stage-1 variance components.
pub fn fit_hl11(spec: &GlmmSpec, opts: &FitOptions) -> Result<FitResult> {
    Ok(fit_hl_pair(spec, opts)?.0)
}

/// One-stage fit: `β` and `u` come from the final stage-1 inner optimum.
pub fn fit_hl01(spec: &GlmmSpec, opts: &FitOptions) -> Result<FitResult> {
    Ok(fit_hl_pair(spec, opts)?.1)
}

/// Maximizes `p_u(h)` jointly over `β` and the variance parameters.
pub fn fit_mle(spec: &GlmmSpec, opts: &FitOptions) -> Result<FitResult> {
    fit_marginal_laplace(spec, opts, Method::Mle)
}

fn fit_marginal_laplace(spec: &GlmmSpec, opts: &FitOptions, method: Method) -> Result<FitResult> {
    let eng = Engine::new(spec, opts)?;
    let problem = eng.problem(Designated::RandomEffects)?;
    let mut anchor = eng.init.clone();
    let t1 = Instant::now();
    let mut x = eng.init.clone();
    let metric = eng.joint_metric();
    let res = maximize_with(
        |t| {
            eng.set_joint(&mut x, t);
            eng.solve(&problem, &mut x, &mut anchor).map(|s| s.adjusted_profile())
        },
        &eng.joint_to_outer(&eng.init),
        &eng.joint_bounds(),
        &eng.opts.outer(),
        metric,
    )?;
    let mut x = eng.init.clone();
    eng.set_joint(&mut x, &res.x);
    eng.solve(&problem, &mut x, &mut anchor)?;
    let mut fit = eng.result(method, &x);
    fit.stages.push(StageDiagnostics::new("marginal", &res));
    fit.timings.stage1 = seconds_since(t1);
    if opts.standard_errors {
        let t = Instant::now();
        let f = eng.marginal_objective(&x)?;
        match eng.joint_covariance(f, &x) {
            Ok((active, cov)) => eng.apply_joint_covariance(&mut fit, &active, &cov),
            Err(e) => se_warning(&mut fit, "marginal", &e),
        }
        fit.timings.uncertainty = seconds_since(t);
    }
    Ok(fit)
}

/// Adaptive Gauss-Hermite fit with `m` nodes per group, or the zero-order
/// method for `m = 0`. Orders above 1 need a single factor; with two
/// factors `m = 1` is the Laplace marginal fit.
pub fn fit_agh(spec: &GlmmSpec, m: usize, opts: &FitOptions) -> Result<FitResult> {
    if m == 0 {
        return fit_agh0(spec, opts);
    }
    if spec.dataset.group2.is_some() {
        if m == 1 {
            return fit_marginal_laplace(spec, opts, Method::Agh(1));
        }
        return Err(Error::InvalidModel(format!(
            "AGH with {m} nodes needs a single random-effect factor"
        )));
    }
    let rule = gh_nodes(m)?;
    let groups = Groups::new(spec)?;
    let eng = Engine::new(spec, opts)?;
    let l = eng.layout;
    let q = groups.len();
    let agh = |x: &[f64], modes: &mut Vec<f64>| -> Result<f64> {
        let sigma = x[l.log_sd().start].exp();
        let phi = l.log_phi().map_or(1.0, |k| x[k].exp());
        let start = modes.clone();
        match agh_marginal(spec, &groups, &x[l.beta()], sigma, phi, &rule, modes) {
            Ok(v) => Ok(v),
            Err(_) => {
                modes.fill(0.0);
                agh_marginal(spec, &groups, &x[l.beta()], sigma, phi, &rule, modes).inspect_err(|_| {
                    modes.copy_from_slice(&start);
                })
            }
        }
    };
    let t1 = Instant::now();
    let mut modes = vec![0.0; q];
    let mut x = eng.init.clone();
    let metric = eng.joint_metric();
    let res = maximize_with(
        |t| {
            eng.set_joint(&mut x, t);
            agh(&x, &mut modes)
        },
        &eng.joint_to_outer(&eng.init),
        &eng.joint_bounds(),
        &eng.opts.outer(),
        metric,
    )?;
    let mut x = eng.init.clone();
    eng.set_joint(&mut x, &res.x);
    agh(&x, &mut modes)?;
    x[l.u1()].copy_from_slice(&modes);
    let mut fit = eng.result(Method::Agh(m), &x);
    fit.stages.push(StageDiagnostics::new("quadrature", &res));
    fit.timings.stage1 = seconds_since(t1);
    if opts.standard_errors {
        let t = Instant::now();
        let mut local = modes.clone();
        match eng.joint_covariance(|y| agh(y, &mut local), &x) {
            Ok((active, cov)) => eng.apply_joint_covariance(&mut fit, &active, &cov),
            Err(e) => se_warning(&mut fit, "quadrature", &e),
        }
        fit.timings.uncertainty = seconds_since(t);
    }
    Ok(fit)
}

/// Zero-order method: for each set of variance parameters, `(β̃, ũ)` is
/// the joint mode of `h`, and the objective is `p_u(h)` at `β̃`.
fn fit_agh0(spec: &GlmmSpec, opts: &FitOptions) -> Result<FitResult> {
    let eng = Engine::new(spec, opts)?;
    let l = eng.layout;
    let joint = eng.problem(Designated::RandomAndFixed)?;
    let over_u = eng.problem(Designated::RandomEffects)?;
    let objective = |x: &mut Vec<f64>, anchor: &mut Vec<f64>| -> Result<(f64, InnerSolution)> {
        let sol = eng.solve(&joint, x, anchor)?;
        let mut y = x.clone();
        let pu = inner_newton(&over_u, &mut y, eng.opts.inner_tol, eng.opts.inner_max_iter)?;
        Ok((pu.adjusted_profile(), sol))
    };
    let t1 = Instant::now();
    let mut anchor = eng.init.clone();
    let mut x = eng.init.clone();
    let res = maximize(
        |t| {
            eng.set_vars(&mut x, t);
            objective(&mut x, &mut anchor).map(|r| r.0)
        },
        &eng.vars_to_outer(&eng.init),
        &eng.var_bounds(),
        &eng.opts.outer(),
    )?;
    let mut x = eng.init.clone();
    eng.set_vars(&mut x, &res.x);
    let (_, sol) = objective(&mut x, &mut anchor)?;
    let mut fit = eng.result(Method::Agh0, &x);
    fit.stages.push(StageDiagnostics::new("zero-order", &res));
    fit.timings.stage1 = seconds_since(t1);
    if opts.standard_errors {
        let t = Instant::now();
        fit.set_beta_covariance(&beta_block(&sol, l.q2, l.p));
        let mut a = x.clone();
        match eng.var_covariance(
            |y| {
                let mut y = y.to_vec();
                objective(&mut y, &mut a).map(|r| r.0)
            },
            &x,
        ) {
            Ok((active, cov)) => eng.apply_var_covariance(&mut fit, &active, &cov),
            Err(e) => se_warning(&mut fit, "variance-component", &e),
        }
        fit.timings.uncertainty = seconds_since(t);
    }
    Ok(fit)
}

/// Dispatches on `method`.
pub fn fit(spec: &GlmmSpec, method: Method, opts: &FitOptions) -> Result<FitResult> {
    match method {
        Method::Hl11 => fit_hl11(spec, opts),
        Method::Hl01 => fit_hl01(spec, opts),
        Method::Mle => fit_mle(spec, opts),
        Method::Agh(m) => fit_agh(spec, m, opts),
        Method::Agh0 => fit_agh0(spec, opts),
    }
}

/// Replaces the random-effect predictions by the mode of `h` over `u`
/// at the fitted `β` and variance components.
pub fn refine_random_effects(spec: &GlmmSpec, fit: &FitResult, opts: &FitOptions) -> Result<FitResult> {
    let l = spec.layout();
    if fit.beta.len() != l.p || fit.log_sd.len() != l.r || fit.u1.len() != l.q1 || fit.u2.len() != l.q2 {
        return Err(Error::Dimension("fit does not match the model".into()));
    }
    let mut x = Vec::with_capacity(l.n());
    x.extend_from_slice(&fit.beta);
    x.extend_from_slice(&fit.u1);
    x.extend_from_slice(&fit.u2);
    x.extend_from_slice(&fit.log_sd);
    if l.gaussian {
        x.push(fit.phi.unwrap_or(1.0).ln());
    }
    let tape = record_h(spec, &x, opts.chunks)?;
    let (w, nd) = designated_indices(spec, Designated::RandomEffects);
    let problem = InnerProblem::new(&tape, w, nd)?;
    inner_newton(&problem, &mut x, opts.inner_tol, opts.inner_max_iter)?;
    let mut out = fit.clone();
    out.u1 = x[l.u1()].to_vec();
    out.u2 = x[l.u2()].to_vec();
    Ok(out)
}
