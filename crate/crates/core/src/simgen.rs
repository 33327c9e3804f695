//! Seeded synthetic repeated-measures datasets with patient (IP) and
//! facility (HCF) random effects, nested or partially crossed.
//!
//! Every stage draws from its own PCG-XSH-RR 64/32 generator. The state
//! is derived from `(seed, stage)`; the stream is the patient index (the
//! facility index for facility effects). Stages and patients can
//! therefore be regenerated independently, and output does not depend on
//! the thread count.
//!
//! Draw order per patient:
//! - structure: visits, facility count, `N_HCF` weights, facility
//!   selection (partial Fisher-Yates), multinomial allocation by
//!   sequential binomials;
//! - covariates: age, potassium mean, eGFR, gender, CCI, then per visit
//!   the visit potassium and length of stay;
//! - outcomes: one uniform or Bernoulli draw per visit.

use rand::{Rng, RngExt};
use rand_distr::{Binomial, Distribution, Gamma, LogNormal, Normal, Poisson};
use rand_pcg::Pcg32;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::design::{build_dataset, DesignSpec, Levels, Table, Term};
use crate::error::{Error, Result};
use crate::family::{inv_logit, Family};
use crate::model::Dataset;
use crate::splines::KnotSpec;

/// Cap on rejection-sampling attempts for one truncated draw.
pub const MAX_REJECTIONS: usize = 1_000_000;

const STAGE_STRUCTURE: u64 = 1;
const STAGE_COVARIATES: u64 = 2;
const STAGE_EFFECTS_IP: u64 = 3;
const STAGE_EFFECTS_HCF: u64 = 4;
const STAGE_OUTCOMES: u64 = 5;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stage_rng(seed: u64, stage: u64, index: u64) -> Pcg32 {
    Pcg32::new(mix64(seed ^ mix64(stage)), index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum Crossing {
    Nested,
    PartCrossed,
    MoreCrossed,
}

impl Crossing {
    fn slug(self) -> &'static str {
        match self {
            Crossing::Nested => "nested",
            Crossing::PartCrossed => "partcrossed",
            Crossing::MoreCrossed => "morecrossed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum OutcomeKind {
    PoissonCounts,
    Binary,
}

/// Visits per patient: negative binomial with size `mu_v` and success
/// probability `phi_v`, truncated to the integers in `[m_v, M_v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VisitParams {
    pub mu_v: f64,
    pub phi_v: f64,
    pub m_v: f64,
    #[serde(rename = "M_v")]
    pub big_m_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FacilityParams {
    pub lambda_f: f64,
    pub m_f: f64,
    #[serde(rename = "M_f")]
    pub big_m_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WeightParams {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
}

/// Normal parameters truncated to `[m, M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
}

/// Negative binomial with mean `mu` and size `size`, truncated to the
/// integers in `[m, M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNb {
    pub mu: f64,
    pub size: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CovariateParams {
    pub age: TruncatedNormal,
    #[serde(rename = "K")]
    pub k: TruncatedNormal,
    pub p_k: f64,
    #[serde(rename = "eGFR")]
    pub egfr: TruncatedNormal,
    pub p_gender: f64,
    #[serde(rename = "CCI")]
    pub cci: TruncatedNb,
    pub mu_los: f64,
    pub sigma_los: f64,
}

impl Default for CovariateParams {
    fn default() -> Self {
        let tn = |mu, sigma, m, big_m| TruncatedNormal { mu, sigma, m, big_m };
        Self {
            age: tn(58.0, 12.0, 18.0, 100.0),
            k: tn(4.1, 1.0, 2.0, 8.0),
            p_k: 0.05,
            egfr: tn(82.0, 28.0, 15.0, 120.0),
            p_gender: 0.44,
            cci: TruncatedNb {
                mu: 0.98,
                size: 0.55,
                m: 0.0,
                big_m: 29.0,
            },
            mu_los: -0.148_346_9,
            sigma_los: 1.413_642,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KnotParams {
    pub age: KnotSpec,
    #[serde(rename = "K")]
    pub k: KnotSpec,
    #[serde(rename = "eGFR")]
    pub egfr: KnotSpec,
}

impl Default for KnotParams {
    fn default() -> Self {
        let ks = |lo, hi, a, b| KnotSpec {
            boundary: (lo, hi),
            interior: vec![a, b],
        };
        Self {
            age: ks(18.0, 100.0, 50.0, 66.0),
            k: ks(2.0, 8.0, 3.0, 5.0),
            egfr: ks(15.0, 120.0, 50.0, 90.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub beta0: f64,
    #[serde(default)]
    pub beta_age: Vec<f64>,
    #[serde(default, rename = "beta_K")]
    pub beta_k: Vec<f64>,
    #[serde(default, rename = "beta_eGFR")]
    pub beta_egfr: Vec<f64>,
    #[serde(default, rename = "beta_CCI")]
    pub beta_cci: f64,
    #[serde(default, rename = "beta_Gender")]
    pub beta_gender: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub name: String,
    #[serde(rename = "N_IP")]
    pub n_ip: usize,
    #[serde(rename = "N_HCF")]
    pub n_hcf: usize,
    pub crossing: Crossing,
    pub visits: VisitParams,
    pub facilities: FacilityParams,
    pub weights: WeightParams,
    #[serde(default)]
    pub covariates: CovariateParams,
    #[serde(default)]
    pub knots: KnotParams,
    pub outcome: OutcomeKind,
    pub coefficients: Coefficients,
    #[serde(rename = "sigma_IP")]
    pub sigma_ip: f64,
    #[serde(rename = "sigma_HCF")]
    pub sigma_hcf: f64,
    /// Log length of stay enters the Poisson linear predictor as an offset.
    #[serde(default = "default_true")]
    pub los_offset: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn bounds_ok(m: f64, big_m: f64) -> bool {
    m.is_finite() && big_m.is_finite() && m < big_m
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("scenario `{}`: {what}", self.name)));
        if self.n_ip < 1 || self.n_hcf < 1 {
            return bad("N_IP and N_HCF must be at least 1");
        }
        let v = &self.visits;
        if !bounds_ok(v.m_v, v.big_m_v) || !bounds_ok(self.facilities.m_f, self.facilities.big_m_f) {
            return bad("truncation bounds need m < M");
        }
        let c = &self.covariates;
        for tn in [&c.age, &c.k, &c.egfr] {
            if !bounds_ok(tn.m, tn.big_m) || !(tn.sigma > 0.0) {
                return bad("covariate bounds need m < M and sd > 0");
            }
        }
        if !bounds_ok(c.cci.m, c.cci.big_m) {
            return bad("CCI bounds need m < M");
        }
        if !(v.phi_v > 0.0 && v.phi_v < 1.0) {
            return bad("phi_v is a success probability in (0, 1)");
        }
        let positive = [
            v.mu_v,
            self.facilities.lambda_f,
            self.weights.sigma_alpha,
            c.cci.mu,
            c.cci.size,
            c.sigma_los,
            c.p_k,
            self.sigma_ip,
            self.sigma_hcf,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return bad("rates, sizes and standard deviations must be positive");
        }
        if !(0.0..=1.0).contains(&c.p_gender) {
            return bad("p_gender must lie in [0, 1]");
        }
        if self.outcome == OutcomeKind::PoissonCounts {
            let k = &self.coefficients;
            if k.beta_age.len() != 3 || k.beta_k.len() != 3 || k.beta_egfr.len() != 3 {
                return bad("Poisson scenarios need three coefficients per spline term");
            }
            for spec in [&self.knots.age, &self.knots.k, &self.knots.egfr] {
                if spec.interior.len() != 2 {
                    return bad("spline terms need two interior knots");
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        match self.outcome {
            OutcomeKind::PoissonCounts => Family::Poisson,
            OutcomeKind::Binary => Family::Bernoulli,
        }
    }

    /// Fixed-effect design used to simulate and to fit.
    pub fn design(&self) -> DesignSpec {
        match self.outcome {
            OutcomeKind::Binary => DesignSpec::default(),
            OutcomeKind::PoissonCounts => {
                let spline = |c: &str, k: &KnotSpec| Term {
                    column: c.into(),
                    spline: Some(k.clone()),
                };
                DesignSpec {
                    intercept: true,
                    terms: vec![
                        spline("age", &self.knots.age),
                        spline("K", &self.knots.k),
                        spline("eGFR", &self.knots.egfr),
                        Term {
                            column: "CCI".into(),
                            spline: None,
                        },
                        Term {
                            column: "gender".into(),
                            spline: None,
                        },
                    ],
                }
            }
        }
    }

    /// True coefficients in design-column order.
    pub fn true_beta(&self) -> Vec<f64> {
        let k = &self.coefficients;
        match self.outcome {
            OutcomeKind::Binary => vec![k.beta0],
            OutcomeKind::PoissonCounts => {
                let mut b = vec![k.beta0];
                b.extend(&k.beta_age);
                b.extend(&k.beta_k);
                b.extend(&k.beta_egfr);
                b.push(k.beta_cci);
                b.push(k.beta_gender);
                b
            }
        }
    }
}

/// Parameter sets for every built-in scenario.
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for c in [Crossing::Nested, Crossing::PartCrossed, Crossing::MoreCrossed] {
        for size in ["100x5", "1000x50"] {
            names.push(format!("poisson-{}-{size}", c.slug()));
        }
    }
    for c in [Crossing::Nested, Crossing::PartCrossed, Crossing::MoreCrossed] {
        for size in ["100x5", "1000x50"] {
            names.push(format!("binary-less-{}-{size}", c.slug()));
        }
        for size in ["100x5", "1000x50", "10000x50"] {
            names.push(format!("binary-more-{}-{size}", c.slug()));
        }
    }
    names
}

/// Builds a preset by name, e.g. `poisson-nested-1000x50` or
/// `binary-more-partcrossed-10000x50`.
pub fn preset(name: &str) -> Result<SimScenario> {
    if !preset_names().iter().any(|n| n == name) {
        return Err(Error::Config(format!(
            "unknown preset `{name}`; known presets: {}",
            preset_names().join(", ")
        )));
    }
    let parts: Vec<&str> = name.split('-').collect();
    let (outcome, more, crossing, size) = match parts.as_slice() {
        ["poisson", c, s] => (OutcomeKind::PoissonCounts, false, *c, *s),
        ["binary", v, c, s] => (OutcomeKind::Binary, *v == "more", *c, *s),
        _ => unreachable!("validated against preset_names"),
    };
    let crossing = match crossing {
        "nested" => Crossing::Nested,
        "partcrossed" => Crossing::PartCrossed,
        _ => Crossing::MoreCrossed,
    };
    let (n_ip, n_hcf) = match size {
        "100x5" => (100, 5),
        "1000x50" => (1000, 50),
        _ => (10000, 50),
    };
    let (m_f, big_m_f, lambda_f) = match crossing {
        Crossing::Nested => (0.0, 1.1, 0.25),
        Crossing::PartCrossed => (0.0, 0.1 + n_hcf as f64, 1.0),
        Crossing::MoreCrossed => (0.0, 0.1 + n_hcf as f64, if n_ip > 100 { 25.25 } else { 2.25 }),
    };
    let coefficients = match outcome {
        OutcomeKind::PoissonCounts => Coefficients {
            beta0: if n_ip == 100 { -4.5 } else { -5.5 },
            beta_age: vec![1.0, 2.0, 1.5],
            beta_k: vec![1.5, -1.1, 2.2],
            beta_egfr: vec![1.0, 0.2, 0.12],
            beta_cci: 0.15,
            beta_gender: 0.26,
        },
        OutcomeKind::Binary => Coefficients {
            beta0: match n_ip {
                100 => -5.5,
                1000 => -7.5,
                _ => -9.5,
            },
            beta_age: vec![],
            beta_k: vec![],
            beta_egfr: vec![],
            beta_cci: 0.0,
            beta_gender: 0.0,
        },
    };
    Ok(SimScenario {
        name: name.into(),
        n_ip,
        n_hcf,
        crossing,
        visits: VisitParams {
            mu_v: 7.74,
            phi_v: 0.575,
            m_v: 1.0,
            big_m_v: 10.0,
        },
        facilities: FacilityParams {
            lambda_f,
            m_f,
            big_m_f,
        },
        weights: WeightParams {
            mu_alpha: 3.0,
            sigma_alpha: 0.2,
        },
        covariates: CovariateParams::default(),
        knots: KnotParams::default(),
        outcome,
        coefficients,
        sigma_ip: if more { 2.5 } else { 1.0 },
        sigma_hcf: 0.5,
        los_offset: true,
        seed: 0,
    })
}

fn infeasible(what: &str) -> Error {
    Error::InfeasibleTruncation(format!("{what}: no accepted draw in {MAX_REJECTIONS} attempts"))
}

fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(d) => {
            let v: f64 = d.sample(rng);
            v as u64
        }
        Err(_) => 0,
    }
}

/// Negative binomial with `size` and success probability `prob` as a
/// Gamma-Poisson mixture, rejected until it lies in `[lo, hi]`.
pub fn truncated_nb<R: Rng + ?Sized>(rng: &mut R, size: f64, prob: f64, lo: f64, hi: f64) -> Result<u64> {
    let gamma = Gamma::new(size, (1.0 - prob) / prob).map_err(|e| Error::Config(format!("negative binomial: {e}")))?;
    for _ in 0..MAX_REJECTIONS {
        let lambda = gamma.sample(rng);
        let k = poisson_draw(rng, lambda);
        if k as f64 >= lo && k as f64 <= hi {
            return Ok(k);
        }
    }
    Err(infeasible("negative binomial"))
}

/// Poisson draw rejected until `accept(k)`.
pub fn truncated_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64, accept: impl Fn(u64) -> bool) -> Result<u64> {
    for _ in 0..MAX_REJECTIONS {
        let k = poisson_draw(rng, lambda);
        if accept(k) {
            return Ok(k);
        }
    }
    Err(infeasible("facility count"))
}

pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, p: &TruncatedNormal) -> Result<f64> {
    let d = Normal::new(p.mu, p.sigma).map_err(|e| Error::Config(format!("normal: {e}")))?;
    for _ in 0..MAX_REJECTIONS {
        let v = d.sample(rng);
        if v >= p.m && v <= p.big_m {
            return Ok(v);
        }
    }
    Err(infeasible("normal"))
}

/// Patient-facility visit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Cell {
    pub ip: u32,
    pub hcf: u32,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Structure {
    pub n_ip: usize,
    pub n_hcf: usize,
    /// Visits per patient.
    pub visits: Vec<u32>,
    /// Facilities selected per patient, before allocation.
    pub facilities: Vec<u32>,
    /// Non-empty cells, ordered by patient then selection order.
    pub cells: Vec<Cell>,
}

impl Structure {
    pub fn n_obs(&self) -> usize {
        self.visits.iter().map(|&v| v as usize).sum()
    }

    /// Facilities with at least one visit, per patient.
    pub fn distinct_facilities(&self) -> Vec<u32> {
        let mut out = vec![0; self.n_ip];
        for c in &self.cells {
            out[c.ip as usize] += 1;
        }
        out
    }

    /// Every patient visits exactly one facility.
    pub fn is_nested(&self) -> bool {
        self.distinct_facilities().iter().all(|&d| d == 1)
    }
}

struct PatientCells {
    visits: u32,
    facilities: u32,
    cells: Vec<Cell>,
}

fn patient_structure(s: &SimScenario, seed: u64, j: usize) -> Result<PatientCells> {
    let mut rng = stage_rng(seed, STAGE_STRUCTURE, j as u64);
    let v = &s.visits;
    let nv = truncated_nb(&mut rng, v.mu_v, v.phi_v, v.m_v.ceil(), v.big_m_v.floor())? as u32;
    let f = &s.facilities;
    let cap = s.n_hcf as u64;
    let nf = truncated_poisson(&mut rng, f.lambda_f, |k| {
        k >= 1 && k as f64 > f.m_f && k as f64 <= f.big_m_f && k <= cap
    })? as usize;
    let lognormal = LogNormal::new(s.weights.mu_alpha, s.weights.sigma_alpha)
        .map_err(|e| Error::Config(format!("facility weights: {e}")))?;
    let alpha: Vec<f64> = (0..s.n_hcf).map(|_| lognormal.sample(&mut rng)).collect();
    // Partial Fisher-Yates: the first nf entries are a uniform draw
    // without replacement.
    let mut idx: Vec<usize> = (0..s.n_hcf).collect();
    for k in 0..nf {
        let r = rng.random_range(k..s.n_hcf);
        idx.swap(k, r);
    }
    let chosen = &idx[..nf];
    let total: f64 = chosen.iter().map(|&i| alpha[i]).sum();
    let mut remaining_n = nv as u64;
    let mut remaining_p = 1.0;
    let mut cells = Vec::with_capacity(nf);
    for (k, &i) in chosen.iter().enumerate() {
        let p = alpha[i] / total;
        let count = if k + 1 == nf || remaining_n == 0 {
            remaining_n
        } else {
            let q = (p / remaining_p).clamp(0.0, 1.0);
            let c = Binomial::new(remaining_n, q)
                .map_err(|e| Error::Config(format!("multinomial: {e}")))?
                .sample(&mut rng);
            remaining_p -= p;
            c
        };
        remaining_n -= count;
        if count > 0 {
            cells.push(Cell {
                ip: j as u32,
                hcf: i as u32,
                count: count as u32,
            });
        }
    }
    Ok(PatientCells {
        visits: nv,
        facilities: nf as u32,
        cells,
    })
}

pub fn gen_structure(s: &SimScenario, seed: u64) -> Result<Structure> {
    s.validate()?;
    let per: Vec<Result<PatientCells>> = (0..s.n_ip).into_par_iter().map(|j| patient_structure(s, seed, j)).collect();
    let mut out = Structure {
        n_ip: s.n_ip,
        n_hcf: s.n_hcf,
        visits: Vec::with_capacity(s.n_ip),
        facilities: Vec::with_capacity(s.n_ip),
        cells: Vec::new(),
    };
    for p in per {
        let p = p?;
        out.visits.push(p.visits);
        out.facilities.push(p.facilities);
        out.cells.extend(p.cells);
    }
    Ok(out)
}

/// Raw covariate columns, one row per visit in structure order.
pub const COVARIATE_COLUMNS: [&str; 5] = ["age", "K", "eGFR", "CCI", "gender"];

/// Per-visit covariates in [`COVARIATE_COLUMNS`] order, and log length
/// of stay.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub values: Vec<[f64; 5]>,
    pub log_los: Vec<f64>,
}

pub fn gen_covariates(st: &Structure, s: &SimScenario, seed: u64) -> Result<Covariates> {
    let c = &s.covariates;
    let mut first = vec![usize::MAX; st.n_ip];
    let mut per_ip = vec![0usize; st.n_ip];
    for cell in &st.cells {
        per_ip[cell.ip as usize] += cell.count as usize;
    }
    let mut offset = 0;
    for j in 0..st.n_ip {
        first[j] = offset;
        offset += per_ip[j];
    }
    let los = LogNormal::new(c.mu_los, c.sigma_los).map_err(|e| Error::Config(format!("length of stay: {e}")))?;
    let per: Vec<Result<Vec<([f64; 5], f64)>>> = (0..st.n_ip)
        .into_par_iter()
        .map(|j| {
            let mut rng = stage_rng(seed, STAGE_COVARIATES, j as u64);
            let age = truncated_normal(&mut rng, &c.age)?;
            let kj = truncated_normal(&mut rng, &c.k)?;
            let egfr = truncated_normal(&mut rng, &c.egfr)?;
            let gender = if rng.random::<f64>() < c.p_gender { 1.0 } else { 0.0 };
            let prob = c.cci.size / (c.cci.size + c.cci.mu);
            let cci = truncated_nb(&mut rng, c.cci.size, prob, c.cci.m, c.cci.big_m)? as f64;
            let kd = Normal::new(kj, c.p_k * kj).map_err(|e| Error::Config(format!("visit potassium: {e}")))?;
            Ok((0..per_ip[j])
                .map(|_| {
                    let k = kd.sample(&mut rng);
                    let l: f64 = los.sample(&mut rng);
                    ([age, k, egfr, cci, gender], l.ln())
                })
                .collect())
        })
        .collect();
    let mut values = Vec::with_capacity(st.n_obs());
    let mut log_los = Vec::with_capacity(st.n_obs());
    for p in per {
        for (v, l) in p? {
            values.push(v);
            log_los.push(l);
        }
    }
    debug_assert!(first.iter().zip(&per_ip).all(|(&f, &n)| n == 0 || f < values.len()));
    Ok(Covariates { values, log_los })
}

/// True random effects: one draw per patient, one per facility.
pub fn gen_random_effects(s: &SimScenario, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let draw = |stage, n: usize, sd: f64| -> Result<Vec<f64>> {
        let d = Normal::new(0.0, sd).map_err(|e| Error::Config(format!("random effects: {e}")))?;
        Ok((0..n).map(|k| d.sample(&mut stage_rng(seed, stage, k as u64))).collect())
    };
    Ok((draw(STAGE_EFFECTS_IP, s.n_ip, s.sigma_ip)?, draw(STAGE_EFFECTS_HCF, s.n_hcf, s.sigma_hcf)?))
}

/// Poisson counts conditioned on `{0, 1}`: `P(1) = λ / (1 + λ)`.
pub fn truncated_poisson_probability(eta: f64) -> f64 {
    inv_logit(eta)
}

/// Per-visit (patient, facility) labels in structure order.
fn visit_levels(st: &Structure) -> (Vec<usize>, Vec<usize>) {
    let mut ip = Vec::with_capacity(st.n_obs());
    let mut hcf = Vec::with_capacity(st.n_obs());
    for c in &st.cells {
        for _ in 0..c.count {
            ip.push(c.ip as usize);
            hcf.push(c.hcf as usize);
        }
    }
    (ip, hcf)
}

/// Bernoulli draws with success probabilities `prob`, one generator per
/// patient.
fn outcome_draws(ip: &[usize], prob: &[f64], seed: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(prob.len());
    let mut current = usize::MAX;
    let mut rng = stage_rng(seed, STAGE_OUTCOMES, 0);
    for (i, &p) in prob.iter().enumerate() {
        if ip[i] != current {
            current = ip[i];
            rng = stage_rng(seed, STAGE_OUTCOMES, current as u64);
        }
        out.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    }
    out
}

/// Poisson outcomes on an expanded dataset: `η = Xβ + offset + u_IP + u_HCF`.
pub fn gen_poisson_outcomes(
    dataset: &Dataset,
    ip: &[usize],
    hcf: &[usize],
    beta: &[f64],
    u: (&[f64], &[f64]),
    seed: u64,
) -> Vec<f64> {
    let prob: Vec<f64> = (0..dataset.n())
        .map(|i| {
            let xb: f64 = dataset.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            truncated_poisson_probability(xb + dataset.offset[i] + u.0[ip[i]] + u.1[hcf[i]])
        })
        .collect();
    outcome_draws(ip, &prob, seed)
}

/// Binary outcomes: `logit p = β⁰ + u_IP + u_HCF`.
pub fn gen_binary_outcomes(st: &Structure, beta0: f64, u: (&[f64], &[f64]), seed: u64) -> Vec<f64> {
    let (ip, hcf) = visit_levels(st);
    let prob: Vec<f64> = (0..ip.len()).map(|i| inv_logit(beta0 + u.0[ip[i]] + u.1[hcf[i]])).collect();
    outcome_draws(&ip, &prob, seed)
}

/// True values for one simulated dataset, indexed by generator labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Truth {
    pub beta: Vec<f64>,
    /// `[σ_IP, σ_HCF]`.
    pub sigma: Vec<f64>,
    pub u_ip: Vec<f64>,
    pub u_hcf: Vec<f64>,
}

impl Truth {
    /// True effects aligned with the level order of a built dataset.
    pub fn aligned(&self, levels: &Levels) -> (Vec<f64>, Vec<f64>) {
        let pick = |labels: &[String], u: &[f64]| {
            labels
                .iter()
                .map(|l| l.parse::<usize>().ok().and_then(|k| u.get(k).copied()).unwrap_or(f64::NAN))
                .collect()
        };
        (pick(&levels.ip, &self.u_ip), pick(&levels.hcf, &self.u_hcf))
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub scenario: SimScenario,
    pub seed: u64,
    pub structure: Structure,
    pub table: Table,
    pub truth: Truth,
}

impl SimDataset {
    pub fn family(&self) -> Family {
        self.scenario.family()
    }

    /// The dataset as the fitting code sees it.
    pub fn dataset(&self) -> Result<(Dataset, Levels)> {
        build_dataset(&self.table, &self.scenario.design())
    }

    pub fn event_rate(&self) -> f64 {
        self.table.y.iter().sum::<f64>() / self.table.n() as f64
    }
}

/// Structure, covariates, random effects and outcomes for one seed.
pub fn simulate(s: &SimScenario, seed: u64) -> Result<SimDataset> {
    let structure = gen_structure(s, seed)?;
    let (ip, hcf) = visit_levels(&structure);
    let (u_ip, u_hcf) = gen_random_effects(s, seed)?;
    let n = ip.len();
    let labels = |v: &[usize]| v.iter().map(|k| k.to_string()).collect::<Vec<_>>();
    let mut table = Table {
        ip_id: labels(&ip),
        hcf_id: Some(labels(&hcf)),
        y: vec![0.0; n],
        log_offset: vec![0.0; n],
        columns: Vec::new(),
        values: Vec::new(),
    };
    let beta = s.true_beta();
    match s.outcome {
        OutcomeKind::Binary => {
            table.y = gen_binary_outcomes(&structure, s.coefficients.beta0, (&u_ip, &u_hcf), seed);
        }
        OutcomeKind::PoissonCounts => {
            let cov = gen_covariates(&structure, s, seed)?;
            table.columns = COVARIATE_COLUMNS.iter().map(|c| c.to_string()).collect();
            table.values = cov.values.iter().flatten().copied().collect();
            if s.los_offset {
                table.log_offset = cov.log_los;
            }
            let (d, _) = build_dataset(&table, &s.design())?;
            table.y = gen_poisson_outcomes(&d, &ip, &hcf, &beta, (&u_ip, &u_hcf), seed);
        }
    }
    Ok(SimDataset {
        scenario: s.clone(),
        seed,
        structure,
        table,
        truth: Truth {
            beta,
            sigma: vec![s.sigma_ip, s.sigma_hcf],
            u_ip,
            u_hcf,
        },
    })
}
