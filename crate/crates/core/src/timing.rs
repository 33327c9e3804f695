//! Wall-time measurements: fit time over a dataset-size ladder with a
//! per-stage breakdown, and serial versus parallel evaluation of the
//! chunked h-likelihood reduction.

use std::time::Instant;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::design::build_dataset;
use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions, Method, SCHEMA_VERSION};
use crate::model::{record_h, GlmmSpec};
use crate::simgen::{preset, simulate, SimScenario};
use crate::study::quantile;

/// Nested Poisson scenario with `n_ip` patients; the ladder drops the
/// facility factor.
pub fn ladder_scenario(n_ip: usize) -> Result<SimScenario> {
    let mut s = preset("poisson-nested-1000x50")?;
    s.n_ip = n_ip;
    s.name = format!("poisson-single-{n_ip}");
    Ok(s)
}

/// Single-factor Poisson model on a simulated ladder dataset.
pub fn single_factor_spec(n_ip: usize, seed: u64) -> Result<GlmmSpec> {
    let s = ladder_scenario(n_ip)?;
    let mut sim = simulate(&s, seed)?;
    sim.table.hcf_id = None;
    let (d, _) = build_dataset(&sim.table, &s.design())?;
    GlmmSpec::new(s.family(), d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LadderRow {
    pub n_ip: usize,
    pub n_obs: usize,
    pub replicates: usize,
    /// Medians over replicates, seconds.
    pub total: f64,
    pub tape_build: f64,
    pub stage1: f64,
    pub stage2: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LadderReport {
    pub schema_version: u32,
    pub method: Method,
    pub rows: Vec<LadderRow>,
    /// Least-squares slope of log total time on log observations.
    pub growth_exponent: f64,
}

/// Output of `hlik bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BenchReport {
    pub schema_version: u32,
    pub ladder: LadderReport,
    /// Observations in the dataset used for the reduction timings.
    pub reduction_n_obs: usize,
    pub reduction: Vec<ReductionRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Fits `method` `replicates` times per size; one simulated dataset per
/// size.
pub fn run_ladder(
    sizes: &[usize],
    method: Method,
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<LadderReport> {
    if sizes.len() < 2 || replicates == 0 {
        return Err(Error::Config("a ladder needs at least two sizes and one replicate".into()));
    }
    let mut rows = Vec::new();
    for &n_ip in sizes {
        let spec = single_factor_spec(n_ip, seed)?;
        let mut stages: [Vec<f64>; 5] = Default::default();
        for _ in 0..replicates {
            let t = Instant::now();
            let f = fit(&spec, method, opts)?;
            stages[0].push(t.elapsed().as_secs_f64());
            stages[1].push(f.timings.tape_build);
            stages[2].push(f.timings.stage1);
            stages[3].push(f.timings.stage2);
            stages[4].push(f.timings.uncertainty);
        }
        let [total, tape, s1, s2, unc] = stages.map(median);
        rows.push(LadderRow {
            n_ip,
            n_obs: spec.dataset.n(),
            replicates,
            total,
            tape_build: tape,
            stage1: s1,
            stage2: s2,
            uncertainty: unc,
        });
    }
    let growth_exponent = log_log_slope(
        &rows.iter().map(|r| r.n_obs as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.total).collect::<Vec<_>>(),
    );
    Ok(LadderReport {
        schema_version: SCHEMA_VERSION,
        method,
        rows,
        growth_exponent,
    })
}

/// Slope of `ln y` on `ln x` by ordinary least squares.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-12).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ReductionRow {
    pub threads: usize,
    pub chunks: usize,
    pub evaluations: usize,
    pub seconds_per_evaluation: f64,
    /// Relative to the first row.
    pub speedup: f64,
}

/// Times value, gradient and sparse Hessian of `h` over the random
/// effects on a tape split into `chunks` parts, once per thread count.
pub fn reduction_timing(spec: &GlmmSpec, threads: &[usize], chunks: usize, evaluations: usize) -> Result<Vec<ReductionRow>> {
    let layout = spec.layout();
    let x0 = vec![0.0; layout.n()];
    let tape = record_h(spec, &x0, chunks)?;
    let w: Vec<usize> = layout.u1().chain(layout.u2()).collect();
    let plan = tape.plan(&w)?;
    let mut rows: Vec<ReductionRow> = Vec::new();
    for &t in threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let seconds = pool.install(|| -> Result<f64> {
            let start = Instant::now();
            for _ in 0..evaluations.max(1) {
                tape.value_gradient_hessian(&plan, &x0)?;
            }
            Ok(start.elapsed().as_secs_f64() / evaluations.max(1) as f64)
        })?;
        let base = rows.first().map_or(seconds, |r| r.seconds_per_evaluation);
        rows.push(ReductionRow {
            threads: t.max(1),
            chunks,
            evaluations: evaluations.max(1),
            seconds_per_evaluation: seconds,
            speedup: base / seconds,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ladder_reports_stage_breakdown() {
        let opts = FitOptions::default();
        let r = run_ladder(&[300, 600], Method::Hl11, 1, 4, &opts).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows[1].n_obs > r.rows[0].n_obs);
        for row in &r.rows {
            assert!(row.stage1 > 0.0 && row.stage2 > 0.0 && row.uncertainty > 0.0);
            assert!(row.total >= row.stage1);
        }
        assert!(r.growth_exponent.is_finite());
    }

    #[test]
    fn reduction_rows_per_thread_count() {
        let spec = single_factor_spec(40, 1).unwrap();
        let rows = reduction_timing(&spec, &[1, 2], 4, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].speedup, 1.0);
        assert!(rows.iter().all(|r| r.seconds_per_evaluation > 0.0));
    }
}
