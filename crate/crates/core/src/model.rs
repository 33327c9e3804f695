//! GLMM specification and the hierarchical log-likelihood.
//!
//! `h = Σ log f(y | η, φ) + Σ_factors Σ_levels log N(u; 0, σ²)` with
//! `η = Xβ + u1[g1] + u2[g2] + offset`. The random-effects design is
//! never materialized; grouping maps index the levels directly.

use std::ops::Range;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::adtape::{ChunkedTape, Tape, TapeBuilder, Var};
use crate::error::{Error, Result};
use crate::family::Family;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observation-level data with dense fixed effects and up to two factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
    /// Row-major `n x p`.
    pub x: Vec<f64>,
    pub p: usize,
    pub group1: Vec<usize>,
    pub q1: usize,
    pub group2: Option<Vec<usize>>,
    pub q2: usize,
    #[serde(default)]
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::Data("dataset has no observations".into()));
        }
        if self.offset.len() != n || self.x.len() != n * self.p || self.group1.len() != n {
            return Err(Error::Dimension(format!(
                "n = {n}: offset {}, x {} (p = {}), group1 {}",
                self.offset.len(),
                self.x.len(),
                self.p,
                self.group1.len()
            )));
        }
        if let Some(&g) = self.group1.iter().find(|&&g| g >= self.q1) {
            return Err(Error::Data(format!("group1 level {g} outside 0..{}", self.q1)));
        }
        match &self.group2 {
            Some(g2) => {
                if g2.len() != n {
                    return Err(Error::Dimension(format!("group2 has {} entries, n = {n}", g2.len())));
                }
                if let Some(&g) = g2.iter().find(|&&g| g >= self.q2) {
                    return Err(Error::Data(format!("group2 level {g} outside 0..{}", self.q2)));
                }
            }
            None if self.q2 != 0 => {
                return Err(Error::Dimension("q2 > 0 without a second grouping map".into()))
            }
            None => {}
        }
        if let Some(i) = (0..n).find(|&i| {
            !self.y[i].is_finite() || !self.offset[i].is_finite() || self.row(i).iter().any(|v| !v.is_finite())
        }) {
            return Err(Error::Data(format!("non-finite value in observation {i}")));
        }
        Ok(())
    }

    pub fn n_factors(&self) -> usize {
        if self.group2.is_some() {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum FactorStructure {
    Single,
    Crossed,
}

#[derive(Debug, Clone)]
pub struct GlmmSpec {
    pub family: Family,
    pub dataset: Dataset,
    pub structure: FactorStructure,
}

impl GlmmSpec {
    pub fn new(family: Family, dataset: Dataset) -> Result<Self> {
        dataset.validate()?;
        for i in 0..dataset.n() {
            family.validate(dataset.y[i], 1.0)?;
        }
        let structure = if dataset.group2.is_some() {
            FactorStructure::Crossed
        } else {
            FactorStructure::Single
        };
        Ok(Self {
            family,
            dataset,
            structure,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout {
            p: self.dataset.p,
            q1: self.dataset.q1,
            q2: self.dataset.q2,
            r: self.dataset.n_factors(),
            gaussian: self.family == Family::Gaussian,
        }
    }
}

/// Positions of each parameter block in the packed vector
/// `[β | u1 | u2 | log_sd | log_phi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub p: usize,
    pub q1: usize,
    pub q2: usize,
    pub r: usize,
    pub gaussian: bool,
}

impl Layout {
    pub fn beta(&self) -> Range<usize> {
        0..self.p
    }
    pub fn u1(&self) -> Range<usize> {
        self.p..self.p + self.q1
    }
    pub fn u2(&self) -> Range<usize> {
        self.p + self.q1..self.p + self.q1 + self.q2
    }
    pub fn u(&self) -> Range<usize> {
        self.p..self.p + self.q1 + self.q2
    }
    pub fn log_sd(&self) -> Range<usize> {
        let s = self.p + self.q1 + self.q2;
        s..s + self.r
    }
    pub fn log_phi(&self) -> Option<usize> {
        self.gaussian.then(|| self.p + self.q1 + self.q2 + self.r)
    }
    pub fn n(&self) -> usize {
        self.p + self.q1 + self.q2 + self.r + usize::from(self.gaussian)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ParamState {
    pub beta: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub log_sd: Vec<f64>,
    pub phi: f64,
}

impl ParamState {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            beta: vec![0.0; layout.p],
            u1: vec![0.0; layout.q1],
            u2: vec![0.0; layout.q2],
            log_sd: vec![0.0; layout.r],
            phi: 1.0,
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sd.iter().map(|l| l.exp()).collect()
    }

    pub fn pack(&self, layout: &Layout) -> Vec<f64> {
        let mut x = Vec::with_capacity(layout.n());
        x.extend_from_slice(&self.beta);
        x.extend_from_slice(&self.u1);
        x.extend_from_slice(&self.u2);
        x.extend_from_slice(&self.log_sd);
        if layout.gaussian {
            x.push(self.phi.ln());
        }
        x
    }

    pub fn unpack(layout: &Layout, x: &[f64]) -> Self {
        Self {
            beta: x[layout.beta()].to_vec(),
            u1: x[layout.u1()].to_vec(),
            u2: x[layout.u2()].to_vec(),
            log_sd: x[layout.log_sd()].to_vec(),
            phi: layout.log_phi().map_or(1.0, |k| x[k].exp()),
        }
    }

    fn check(&self, layout: &Layout) -> Result<()> {
        if self.beta.len() != layout.p
            || self.u1.len() != layout.q1
            || self.u2.len() != layout.q2
            || self.log_sd.len() != layout.r
        {
            return Err(Error::Dimension(format!(
                "parameters (p {}, q1 {}, q2 {}, r {}) do not match model (p {}, q1 {}, q2 {}, r {})",
                self.beta.len(),
                self.u1.len(),
                self.u2.len(),
                self.log_sd.len(),
                layout.p,
                layout.q1,
                layout.q2,
                layout.r
            )));
        }
        Ok(())
    }
}

pub fn linear_predictor(spec: &GlmmSpec, params: &ParamState) -> Result<Vec<f64>> {
    params.check(&spec.layout())?;
    let d = &spec.dataset;
    Ok((0..d.n())
        .map(|i| {
            let xb: f64 = d.row(i).iter().zip(&params.beta).map(|(a, b)| a * b).sum();
            let u2 = d.group2.as_ref().map_or(0.0, |g| params.u2[g[i]]);
            xb + params.u1[d.group1[i]] + u2 + d.offset[i]
        })
        .collect())
}

/// `log N(u; 0, σ²)` summed over levels.
pub(crate) fn gaussian_prior(u: &[f64], log_sd: f64) -> f64 {
    let prec = (-2.0 * log_sd).exp();
    let ss: f64 = u.iter().map(|v| v * v).sum();
    -0.5 * prec * ss - u.len() as f64 * (log_sd + 0.5 * LN_2PI)
}

/// Direct evaluation of the hierarchical log-likelihood.
pub fn h_loglik(spec: &GlmmSpec, params: &ParamState) -> Result<f64> {
    let eta = linear_predictor(spec, params)?;
    let d = &spec.dataset;
    let mut h = 0.0;
    for (i, &e) in eta.iter().enumerate() {
        let v = spec.family.log_density(d.y[i], e, params.phi)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteObservation(i));
        }
        h += v;
    }
    h += gaussian_prior(&params.u1, params.log_sd[0]);
    if d.group2.is_some() {
        h += gaussian_prior(&params.u2, params.log_sd[1]);
    }
    if !h.is_finite() {
        return Err(Error::NonFiniteObservation(d.n()));
    }
    Ok(h)
}

/// Number of observation chunks used when recording `h`. Fixed, so
/// results do not depend on the thread count.
pub const DEFAULT_CHUNKS: usize = 8;

fn record_observations(spec: &GlmmSpec, x0: &[f64], rows: Range<usize>) -> Tape {
    let layout = spec.layout();
    let d = &spec.dataset;
    let mut b = TapeBuilder::with_capacity(x0, rows.len() * 8, rows.len() * (layout.p + 4));
    let beta: Vec<Var> = layout.beta().map(|k| b.input(k)).collect();
    let scale = layout.log_phi().map(|k| {
        let lp = b.input(k);
        let nl = b.neg(lp);
        (lp, b.exp(nl))
    });
    let mut terms = Vec::with_capacity(layout.p + 2);
    let mut contributions = Vec::with_capacity(rows.len());
    for i in rows {
        terms.clear();
        terms.extend(beta.iter().zip(d.row(i)).map(|(&v, &c)| (v, c)));
        terms.push((b.input(layout.p + d.group1[i]), 1.0));
        if let Some(g2) = &d.group2 {
            terms.push((b.input(layout.p + layout.q1 + g2[i]), 1.0));
        }
        let eta = b.linear(&terms, d.offset[i]);
        contributions.push(spec.family.record_log_density(&mut b, d.y[i], eta, scale));
    }
    let total = b.sum(&contributions);
    b.finish(total)
}

fn record_prior(spec: &GlmmSpec, x0: &[f64]) -> Tape {
    let layout = spec.layout();
    let mut b = TapeBuilder::new(x0);
    let mut parts = Vec::new();
    let factors = [(layout.u1(), 0), (layout.u2(), 1)];
    for (range, f) in factors.into_iter().take(layout.r) {
        let q = range.len() as f64;
        let ls = b.input(layout.log_sd().start + f);
        let m2 = b.scale(ls, -2.0);
        let prec = b.exp(m2);
        let squares: Vec<Var> = range
            .map(|k| {
                let u = b.input(k);
                b.mul(u, u)
            })
            .collect();
        let ss = b.sum(&squares);
        let quad = b.mul(ss, prec);
        parts.push(b.linear(&[(quad, -0.5), (ls, -q)], -0.5 * q * LN_2PI));
    }
    let total = b.sum(&parts);
    b.finish(total)
}

/// Records `h` as a [`ChunkedTape`]: `chunks` contiguous observation
/// blocks followed by one prior block.
pub fn record_h(spec: &GlmmSpec, x0: &[f64], chunks: usize) -> Result<ChunkedTape> {
    let layout = spec.layout();
    if x0.len() != layout.n() {
        return Err(Error::Dimension(format!(
            "packed parameters have length {}, model needs {}",
            x0.len(),
            layout.n()
        )));
    }
    let n = spec.dataset.n();
    let chunks = chunks.clamp(1, n);
    let mut tapes: Vec<Tape> = (0..chunks)
        .map(|c| record_observations(spec, x0, c * n / chunks..(c + 1) * n / chunks))
        .collect();
    tapes.push(record_prior(spec, x0));
    ChunkedTape::new(tapes)
}
