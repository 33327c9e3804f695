//! Gauss-Hermite rules, adaptive Gauss-Hermite marginals for single-factor
//! models, and brute-force tensor-grid oracles for tiny two-factor models.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::Family;
use crate::model::{gaussian_prior, GlmmSpec, LN_2PI};

pub const MAX_ORDER: usize = 101;
/// Largest random-effect dimension accepted by the tensor-grid oracle.
pub const MAX_GRID_DIM: usize = 8;
/// Largest number of tensor-grid points.
pub const MAX_GRID_POINTS: f64 = 2e7;
const GROUP_CHUNKS: usize = 8;

/// Nodes and weights for `∫ f(x) e^{-x²} dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GhRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Orthonormal Hermite values `φ_0..φ_m` at `x`.
fn orthonormal_hermite(m: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(m + 1);
    p.push(std::f64::consts::PI.powf(-0.25));
    if m >= 1 {
        p.push(std::f64::consts::SQRT_2 * x * p[0]);
    }
    for k in 1..m {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p[k] - (kf / (kf + 1.0)).sqrt() * p[k - 1];
        p.push(next);
    }
    p
}

/// Golub-Welsch: eigenvalues of the symmetric Jacobi matrix with
/// off-diagonal `sqrt(k/2)`, refined by Newton on `φ_m`; weights are the
/// Christoffel numbers `1 / Σ_{j<m} φ_j(x)²`.
pub fn gh_nodes(m: usize) -> Result<GhRule> {
    if !(1..=MAX_ORDER).contains(&m) {
        return Err(Error::QuadratureOrder(m));
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let p = orthonormal_hermite(m, *x);
            let dp = (2.0 * m as f64).sqrt() * p[m - 1];
            if dp != 0.0 {
                *x -= p[m] / dp;
            }
        }
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / orthonormal_hermite(m - 1, x).iter().map(|v| v * v).sum::<f64>())
        .collect();
    // Exact symmetry about zero.
    for k in 0..m / 2 {
        let j = m - 1 - k;
        let x = 0.5 * (nodes[j] - nodes[k]);
        let w = 0.5 * (weights[j] + weights[k]);
        nodes[k] = -x;
        nodes[j] = x;
        weights[k] = w;
        weights[j] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Ok(GhRule { nodes, weights })
}

/// One group's observations with the non-random part of `η` precomputed.
#[derive(Debug, Clone, Copy)]
pub struct GroupTerms<'a> {
    pub family: Family,
    pub y: &'a [f64],
    pub eta0: &'a [f64],
    pub phi: f64,
    pub sigma: f64,
}

impl GroupTerms<'_> {
    fn h(&self, u: f64) -> Result<f64> {
        let mut s = gaussian_prior(&[u], self.sigma.ln());
        for (y, e) in self.y.iter().zip(self.eta0) {
            s += self.family.log_density(*y, e + u, self.phi)?;
        }
        Ok(s)
    }

    fn derivs(&self, u: f64) -> Result<(f64, f64)> {
        let prec = 1.0 / (self.sigma * self.sigma);
        let (mut g, mut h) = (-u * prec, -prec);
        for (y, e) in self.y.iter().zip(self.eta0) {
            let (d1, d2) = self.family.eta_derivatives(*y, e + u, self.phi)?;
            g += d1;
            h += d2;
        }
        Ok((g, h))
    }

    /// Conditional mode by safeguarded Newton.
    pub fn mode(&self, start: f64) -> Result<(f64, f64)> {
        let mut u = if start.is_finite() { start } else { 0.0 };
        let mut f = self.h(u)?;
        let mut polished = false;
        for _ in 0..200 {
            let (g, h) = self.derivs(u)?;
            if !(h < 0.0) {
                return Err(Error::ModeSearch(format!("non-negative curvature {h} at u = {u}")));
            }
            let step = -g / h;
            if polished {
                return Ok((u + step, self.derivs(u + step)?.1));
            }
            let mut t = 1.0;
            loop {
                let cand = u + t * step;
                match self.h(cand) {
                    Ok(fc) if fc >= f - 1e-13 * (1.0 + f.abs()) => {
                        u = cand;
                        f = fc;
                        break;
                    }
                    _ if t < 1e-9 => {
                        return Err(Error::ModeSearch(format!("line search stalled at u = {u}")))
                    }
                    _ => t *= 0.5,
                }
            }
            if (t * step).abs() <= 1e-12 * (1.0 + u.abs()) {
                polished = true;
            }
        }
        Err(Error::ModeSearch("no convergence in 200 Newton steps".into()))
    }

    /// `log ∫ exp(h_g(u)) du` by adaptive Gauss-Hermite; returns the value
    /// and the conditional mode.
    pub fn log_integral(&self, rule: &GhRule, start: f64) -> Result<(f64, f64)> {
        let (mode, curv) = self.mode(start)?;
        let tau = (-curv).sqrt().recip();
        let scale = std::f64::consts::SQRT_2 * tau;
        let mut terms = Vec::with_capacity(rule.order());
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            terms.push(w.ln() + self.h(mode + scale * x)? + x * x);
        }
        Ok((scale.ln() + log_sum_exp(&terms), mode))
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log ∫` of one group's joint density by adaptive Gauss-Hermite.
pub fn agh_group_logintegral(group: &GroupTerms<'_>, rule: &GhRule) -> Result<f64> {
    Ok(group.log_integral(rule, 0.0)?.0)
}

/// Per-group observation lists for a single-factor model.
#[derive(Debug, Clone)]
pub struct Groups {
    members: Vec<Vec<usize>>,
}

impl Groups {
    pub fn new(spec: &GlmmSpec) -> Result<Self> {
        if spec.dataset.group2.is_some() {
            return Err(Error::InvalidModel(
                "adaptive quadrature by groups needs a single random-effect factor".into(),
            ));
        }
        let mut members = vec![Vec::new(); spec.dataset.q1];
        for (i, &g) in spec.dataset.group1.iter().enumerate() {
            members[g].push(i);
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn fixed_part(spec: &GlmmSpec, beta: &[f64]) -> Result<Vec<f64>> {
    let d = &spec.dataset;
    if beta.len() != d.p {
        return Err(Error::Dimension(format!("beta has {} entries, p = {}", beta.len(), d.p)));
    }
    Ok((0..d.n())
        .map(|i| d.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + d.offset[i])
        .collect())
}

/// Single-factor AGH marginal log-likelihood. `modes` holds warm starts
/// and receives the conditional modes.
pub fn agh_marginal(
    spec: &GlmmSpec,
    groups: &Groups,
    beta: &[f64],
    sigma: f64,
    phi: f64,
    rule: &GhRule,
    modes: &mut [f64],
) -> Result<f64> {
    let eta0 = fixed_part(spec, beta)?;
    let d = &spec.dataset;
    let q = groups.len();
    let chunks = GROUP_CHUNKS.min(q.max(1));
    let mut ranges = Vec::with_capacity(chunks);
    for c in 0..chunks {
        ranges.push(c * q / chunks..(c + 1) * q / chunks);
    }
    let starts = modes.to_vec();
    let parts: Vec<Result<(f64, Vec<f64>)>> = ranges
        .par_iter()
        .map(|r| {
            let mut total = 0.0;
            let mut found = Vec::with_capacity(r.len());
            let mut y = Vec::new();
            let mut e = Vec::new();
            for g in r.clone() {
                y.clear();
                e.clear();
                for &i in &groups.members[g] {
                    y.push(d.y[i]);
                    e.push(eta0[i]);
                }
                let terms = GroupTerms {
                    family: spec.family,
                    y: &y,
                    eta0: &e,
                    phi,
                    sigma,
                };
                let (v, m) = terms.log_integral(rule, starts[g])?;
                total += v;
                found.push(m);
            }
            Ok((total, found))
        })
        .collect();
    let mut total = 0.0;
    for (r, part) in ranges.iter().zip(parts) {
        let (v, found) = part?;
        total += v;
        modes[r.clone()].copy_from_slice(&found);
    }
    Ok(total)
}

/// Brute-force marginal log-likelihood. Single-factor models use the
/// per-group product; two-factor models use an adaptive tensor grid over
/// all random effects jointly.
pub fn oracle_marginal_loglik(spec: &GlmmSpec, beta: &[f64], sigma: &[f64], phi: f64, m: usize) -> Result<f64> {
    let rule = gh_nodes(m)?;
    if spec.dataset.group2.is_none() {
        let groups = Groups::new(spec)?;
        let mut modes = vec![0.0; groups.len()];
        return agh_marginal(spec, &groups, beta, sigma[0], phi, &rule, &mut modes);
    }
    tensor_grid(spec, beta, sigma, phi, &rule)
}

/// Joint `h` over all random effects for the tensor oracle.
struct Joint<'a> {
    spec: &'a GlmmSpec,
    eta0: Vec<f64>,
    sigma: &'a [f64],
    phi: f64,
}

impl Joint<'_> {
    fn q1(&self) -> usize {
        self.spec.dataset.q1
    }

    fn levels(&self, i: usize) -> (usize, usize) {
        let d = &self.spec.dataset;
        (d.group1[i], self.q1() + d.group2.as_ref().expect("two factors")[i])
    }

    fn h(&self, u: &[f64]) -> Result<f64> {
        let q1 = self.q1();
        let mut s = gaussian_prior(&u[..q1], self.sigma[0].ln()) + gaussian_prior(&u[q1..], self.sigma[1].ln());
        for (i, e) in self.eta0.iter().enumerate() {
            let (a, b) = self.levels(i);
            s += self.spec.family.log_density(self.spec.dataset.y[i], e + u[a] + u[b], self.phi)?;
        }
        Ok(s)
    }

    fn grad_hess(&self, u: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = u.len();
        let q1 = self.q1();
        let mut g = DVector::zeros(q);
        let mut h = DMatrix::zeros(q, q);
        for k in 0..q {
            let prec = self.sigma[usize::from(k >= q1)].powi(-2);
            g[k] = -u[k] * prec;
            h[(k, k)] = -prec;
        }
        for (i, e) in self.eta0.iter().enumerate() {
            let (a, b) = self.levels(i);
            let (d1, d2) = self
                .spec
                .family
                .eta_derivatives(self.spec.dataset.y[i], e + u[a] + u[b], self.phi)?;
            g[a] += d1;
            g[b] += d1;
            for (r, c) in [(a, a), (a, b), (b, a), (b, b)] {
                h[(r, c)] += d2;
            }
        }
        Ok((g, h))
    }
}

fn tensor_grid(spec: &GlmmSpec, beta: &[f64], sigma: &[f64], phi: f64, rule: &GhRule) -> Result<f64> {
    let q = spec.dataset.q1 + spec.dataset.q2;
    if q > MAX_GRID_DIM {
        return Err(Error::OracleDimension {
            requested: q,
            limit: MAX_GRID_DIM,
        });
    }
    let m = rule.order();
    if (m as f64).powi(q as i32) > MAX_GRID_POINTS {
        return Err(Error::Config(format!(
            "tensor grid of {m}^{q} points exceeds {MAX_GRID_POINTS:e}; lower the order"
        )));
    }
    let joint = Joint {
        spec,
        eta0: fixed_part(spec, beta)?,
        sigma,
        phi,
    };
    // Joint mode by damped Newton.
    let mut u = vec![0.0; q];
    let mut f = joint.h(&u)?;
    let mut converged = false;
    for _ in 0..200 {
        let (g, h) = joint.grad_hess(&u)?;
        let chol = Cholesky::new(-h).ok_or_else(|| Error::ModeSearch("indefinite joint Hessian".into()))?;
        let step = chol.solve(&g);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            match joint.h(&cand) {
                Ok(fc) if fc >= f - 1e-13 * (1.0 + f.abs()) => {
                    u = cand;
                    f = fc;
                    break;
                }
                _ if t < 1e-9 => return Err(Error::ModeSearch("joint line search stalled".into())),
                _ => t *= 0.5,
            }
        }
        if step.amax() * t <= 1e-13 * (1.0 + u.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ModeSearch("joint mode did not converge".into()));
    }
    let (_, h) = joint.grad_hess(&u)?;
    let chol = Cholesky::new(-h).ok_or_else(|| Error::ModeSearch("indefinite joint Hessian".into()))?;
    let l = chol.l();
    let logdet_l: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    // u = û + √2 L⁻ᵀ z.
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::ModeSearch("singular Cholesky factor".into()))?;
    let a = lt_inv * std::f64::consts::SQRT_2;
    let total = (m as f64).powi(q as i32) as usize;
    let log_w: Vec<f64> = rule.weights.iter().map(|w| w.ln()).collect();
    let chunks = 16.min(total);
    let parts: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::with_capacity(total / chunks + 1);
            let mut idx = vec![0usize; q];
            let mut z = vec![0.0; q];
            let mut point = vec![0.0; q];
            for flat in c * total / chunks..(c + 1) * total / chunks {
                let mut rem = flat;
                for k in 0..q {
                    idx[k] = rem % m;
                    rem /= m;
                }
                let mut lw = 0.0;
                let mut zz = 0.0;
                for k in 0..q {
                    z[k] = rule.nodes[idx[k]];
                    lw += log_w[idx[k]];
                    zz += z[k] * z[k];
                }
                for r in 0..q {
                    let mut s = u[r];
                    for k in r..q {
                        s += a[(r, k)] * z[k];
                    }
                    point[r] = s;
                }
                out.push(lw + joint.h(&point)? + zz);
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(total);
    for p in parts {
        all.extend(p?);
    }
    Ok(0.5 * q as f64 * 2f64.ln() - logdet_l + log_sum_exp(&all))
}

/// Single-factor Laplace term for one group, used to cross-check `m = 1`.
pub fn laplace_group_term(group: &GroupTerms<'_>) -> Result<f64> {
    let (mode, curv) = group.mode(0.0)?;
    Ok(group.h(mode)? + 0.5 * LN_2PI - 0.5 * (-curv).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;

    #[test]
    fn order_one_and_two() {
        let r = gh_nodes(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert!((r.weights[0] - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        let r = gh_nodes(2).unwrap();
        assert!((r.nodes[1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.nodes[0], -r.nodes[1]);
        assert!((r.weights[0] - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn order_range() {
        assert!(gh_nodes(0).is_err());
        assert!(gh_nodes(102).is_err());
        assert!(gh_nodes(101).is_ok());
    }

    /// ∫ x^k e^{-x²} dx = Γ((k+1)/2) for even k, zero for odd k.
    fn moment(k: usize) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            libm::tgamma((k as f64 + 1.0) / 2.0)
        }
    }

    #[test]
    fn rules_are_exact_and_symmetric() {
        for m in [2, 3, 5, 9, 20, 51, 101] {
            let r = gh_nodes(m).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12, "m = {m}");
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for k in 0..m {
                assert_eq!(r.nodes[k], -r.nodes[m - 1 - k]);
            }
            for k in 0..=8.min(2 * m - 1) {
                let q: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((q - moment(k)).abs() < 1e-12 * moment(k).max(1.0), "m = {m} k = {k}: {q}");
            }
        }
    }

    fn poisson_group() -> (Vec<f64>, Vec<f64>) {
        (vec![1.0, 0.0], vec![-1.0, -1.0])
    }

    #[test]
    fn order_one_is_the_laplace_term() {
        let (y, e) = poisson_group();
        let g = GroupTerms {
            family: Family::Poisson,
            y: &y,
            eta0: &e,
            phi: 1.0,
            sigma: 1.0,
        };
        let a = agh_group_logintegral(&g, &gh_nodes(1).unwrap()).unwrap();
        let l = laplace_group_term(&g).unwrap();
        assert!((a - l).abs() < 1e-12);
    }

    #[test]
    fn gaussian_group_is_exact_for_every_order() {
        let y = [0.3, -0.4, 1.1];
        let e = [0.1, 0.0, -0.2];
        let (phi, sigma) = (0.8f64, 0.6f64);
        let g = GroupTerms {
            family: Family::Gaussian,
            y: &y,
            eta0: &e,
            phi,
            sigma,
        };
        // Closed form: r = y - e ~ N(0, φI + σ²11ᵀ).
        let r: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a - b).collect();
        let n = 3.0;
        let s2 = sigma * sigma;
        let det = phi.powi(2) * (phi + n * s2);
        let sr: f64 = r.iter().sum();
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let quad = rr / phi - s2 * sr * sr / (phi * (phi + n * s2));
        let exact = -0.5 * n * LN_2PI - 0.5 * det.ln() - 0.5 * quad;
        for m in [1, 2, 5, 9, 25] {
            let v = agh_group_logintegral(&g, &gh_nodes(m).unwrap()).unwrap();
            assert!((v - exact).abs() < 1e-10, "m = {m}");
        }
    }

    /// Composite Simpson on [û - 12τ, û + 12τ], refined until stable.
    fn simpson(g: &GroupTerms<'_>) -> f64 {
        let (mode, curv) = g.mode(0.0).unwrap();
        let tau = (-curv).sqrt().recip();
        let (a, b) = (mode - 12.0 * tau, mode + 12.0 * tau);
        let peak = g.h(mode).unwrap();
        let f = |u: f64| (g.h(u).unwrap() - peak).exp();
        let mut prev = f64::NAN;
        let mut n = 64;
        loop {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
            }
            let v = peak + (s * h / 3.0).ln();
            if (v - prev).abs() < 1e-12 || n > 1 << 20 {
                return v;
            }
            prev = v;
            n *= 2;
        }
    }

    #[test]
    fn high_order_matches_simpson() {
        let (y, e) = poisson_group();
        let g = GroupTerms {
            family: Family::Poisson,
            y: &y,
            eta0: &e,
            phi: 1.0,
            sigma: 1.0,
        };
        let a25 = agh_group_logintegral(&g, &gh_nodes(25).unwrap()).unwrap();
        let a51 = agh_group_logintegral(&g, &gh_nodes(51).unwrap()).unwrap();
        // The exp(exp(u)) tail limits the rate: AGH25 is 1.0e-9 from AGH51.
        assert!((a25 - a51).abs() <= 2e-9);
        assert!((a51 - simpson(&g)).abs() < 1e-8);
        // From m = 3 on; m = 1 happens to land closer than m = 3.
        let mut prev = f64::INFINITY;
        for m in [3, 5, 9, 15, 21, 25] {
            let d = (agh_group_logintegral(&g, &gh_nodes(m).unwrap()).unwrap() - a51).abs();
            assert!(d < prev, "m = {m}");
            prev = d;
        }
    }

    fn small_single() -> GlmmSpec {
        let y = vec![1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 0.0];
        let group1 = vec![0, 0, 1, 1, 2, 2, 2];
        let n = y.len();
        GlmmSpec::new(
            Family::Poisson,
            Dataset {
                y,
                offset: vec![0.0; n],
                x: vec![1.0; n],
                p: 1,
                group1,
                q1: 3,
                group2: None,
                q2: 0,
                column_names: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn tiny_sigma_gives_glm_likelihood() {
        let spec = small_single();
        let beta = [-0.3];
        let v = oracle_marginal_loglik(&spec, &beta, &[1e-6], 1.0, 9).unwrap();
        let glm: f64 = spec
            .dataset
            .y
            .iter()
            .map(|&y| Family::Poisson.log_density(y, -0.3, 1.0).unwrap())
            .sum();
        assert!((v - glm).abs() < 1e-4);
    }

    fn with_empty_second_factor(spec: &GlmmSpec) -> GlmmSpec {
        // A second factor whose single level has negligible variance.
        let mut d = spec.dataset.clone();
        d.group2 = Some(vec![0; d.n()]);
        d.q2 = 1;
        GlmmSpec::new(spec.family, d).unwrap()
    }

    #[test]
    fn tensor_grid_agrees_with_product() {
        let spec = small_single();
        let beta = [-0.2];
        let prod = oracle_marginal_loglik(&spec, &beta, &[0.8], 1.0, 21).unwrap();
        let two = with_empty_second_factor(&spec);
        let grid = oracle_marginal_loglik(&two, &beta, &[0.8, 1e-7], 1.0, 21).unwrap();
        assert!((prod - grid).abs() < 1e-8, "{prod} vs {grid}");
    }

    #[test]
    fn tensor_grid_converges() {
        // 3 IP x 2 HCF, 6 observations.
        let d = Dataset {
            y: vec![1.0, 0.0, 2.0, 0.0, 1.0, 0.0],
            offset: vec![0.0; 6],
            x: vec![1.0; 6],
            p: 1,
            group1: vec![0, 0, 1, 1, 2, 2],
            q1: 3,
            group2: Some(vec![0, 1, 0, 1, 0, 1]),
            q2: 2,
            column_names: vec![],
        };
        let spec = GlmmSpec::new(Family::Poisson, d).unwrap();
        let a = oracle_marginal_loglik(&spec, &[-0.4], &[0.9, 0.5], 1.0, 21).unwrap();
        let b = oracle_marginal_loglik(&spec, &[-0.4], &[0.9, 0.5], 1.0, 25).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn grid_dimension_cap() {
        let n = 10;
        let d = Dataset {
            y: vec![0.0; n],
            offset: vec![0.0; n],
            x: vec![],
            p: 0,
            group1: (0..n).collect(),
            q1: n,
            group2: Some(vec![0; n]),
            q2: 1,
            column_names: vec![],
        };
        let spec = GlmmSpec::new(Family::Poisson, d).unwrap();
        assert!(matches!(
            oracle_marginal_loglik(&spec, &[], &[1.0, 1.0], 1.0, 3),
            Err(Error::OracleDimension { requested: 11, .. })
        ));
    }
}
