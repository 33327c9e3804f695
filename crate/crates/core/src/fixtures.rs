//! Small reference datasets used by the oracle command, the test suites
//! and the benches.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg32;

use crate::error::{Error, Result};
use crate::family::Family;
use crate::model::{Dataset, GlmmSpec};

fn intercept_only(y: Vec<f64>, group1: Vec<usize>, q1: usize, group2: Option<(Vec<usize>, usize)>) -> Dataset {
    let n = y.len();
    let (group2, q2) = match group2 {
        Some((g, q)) => (Some(g), q),
        None => (None, 0),
    };
    Dataset {
        y,
        offset: vec![0.0; n],
        x: vec![1.0; n],
        p: 1,
        group1,
        q1,
        group2,
        q2,
        column_names: vec!["intercept".into()],
    }
}

/// Fixtures addressable by name from the command line.
pub const NAMES: [&str; 4] = ["poisson-single", "poisson-sparse-single", "bernoulli-single", "poisson-two-factor"];

pub fn named(name: &str) -> Result<GlmmSpec> {
    match name {
        "poisson-single" => Ok(poisson_single()),
        "poisson-sparse-single" => Ok(poisson_sparse_single()),
        "bernoulli-single" => Ok(bernoulli_single()),
        "poisson-two-factor" => Ok(poisson_two_factor()),
        _ => Err(Error::Config(format!("unknown fixture `{name}`; known: {}", NAMES.join(", ")))),
    }
}

/// Poisson counts, 5 groups of 4, intercept only.
pub fn poisson_single() -> GlmmSpec {
    let y = [
        6.0, 9.0, 4.0, 7.0, 12.0, 15.0, 10.0, 14.0, 3.0, 5.0, 2.0, 4.0, 8.0, 6.0, 9.0, 11.0, 20.0, 17.0, 22.0, 18.0,
    ];
    let group1 = (0..20).map(|i| i / 4).collect();
    GlmmSpec::new(Family::Poisson, intercept_only(y.to_vec(), group1, 5, None)).expect("valid fixture")
}

/// Sparse Poisson counts, 5 groups of 4, intercept only.
pub fn poisson_sparse_single() -> GlmmSpec {
    let y = [
        1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 1.0, 2.0, 1.0, 0.0, 1.0, 0.0, 0.0, 2.0, 1.0, 1.0, 3.0,
    ];
    let group1 = (0..20).map(|i| i / 4).collect();
    GlmmSpec::new(Family::Poisson, intercept_only(y.to_vec(), group1, 5, None)).expect("valid fixture")
}

/// Binary outcomes, 6 groups of 8, intercept only.
pub fn bernoulli_single() -> GlmmSpec {
    let pattern: [&[u8]; 6] = [
        &[1, 0, 0, 1, 0, 0, 0, 0],
        &[1, 1, 0, 1, 1, 0, 1, 0],
        &[0, 0, 0, 0, 1, 0, 0, 0],
        &[1, 1, 1, 0, 1, 1, 0, 1],
        &[0, 1, 0, 0, 0, 1, 0, 0],
        &[0, 0, 1, 1, 0, 1, 0, 0],
    ];
    let y = pattern.iter().flat_map(|g| g.iter().map(|&v| v as f64)).collect();
    let group1 = (0..48).map(|i| i / 8).collect();
    GlmmSpec::new(Family::Bernoulli, intercept_only(y, group1, 6, None)).expect("valid fixture")
}

/// Poisson counts on 3 IPs crossed with 2 facilities, 12 observations.
pub fn poisson_two_factor() -> GlmmSpec {
    let y = vec![1.0, 3.0, 2.0, 0.0, 4.0, 6.0, 5.0, 2.0, 1.0, 0.0, 2.0, 3.0];
    let group1 = vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
    let group2 = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
    GlmmSpec::new(Family::Poisson, intercept_only(y, group1, 3, Some((group2, 2)))).expect("valid fixture")
}

/// Balanced one-way Gaussian layout, `k` groups of `n`, intercept only,
/// drawn with `σ_u` and residual SD `σ_e`.
pub fn gaussian_balanced(k: usize, n: usize, sd_u: f64, sd_e: f64, seed: u64) -> GlmmSpec {
    let mut rng = Pcg32::seed_from_u64(seed);
    let nu = Normal::new(0.0, sd_u).expect("positive sd");
    let ne = Normal::new(0.0, sd_e).expect("positive sd");
    let mut y = Vec::with_capacity(k * n);
    for _ in 0..k {
        let u = nu.sample(&mut rng);
        for _ in 0..n {
            y.push(1.0 + u + ne.sample(&mut rng));
        }
    }
    let group1 = (0..k * n).map(|i| i / n).collect();
    GlmmSpec::new(Family::Gaussian, intercept_only(y, group1, k, None)).expect("valid fixture")
}
