//! Simulation studies: replicate generation, fitting, and bias/MSE
//! summaries.
//!
//! Replicate `r` uses seed `mix64(base ^ mix64(r))`, so any replicate can
//! be rerun alone. Replicates run in parallel; every aggregate is an
//! ordered fold by replicate index, so reports do not depend on the
//! thread count. Completed replicates are appended to an optional JSONL
//! checkpoint and skipped on resume.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit, fit_hl_pair, FitOptions, FitResult, Method, SCHEMA_VERSION};
use crate::model::GlmmSpec;
use crate::simgen::{mix64, simulate, OutcomeKind, SimScenario};

/// Bias and accuracy of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Metric {
    pub n: usize,
    pub mean_error: f64,
    /// `100·|mean error| / SD`; `None` when the SD is 0 but the bias is not.
    pub std_bias: Option<f64>,
    pub mse: f64,
}

/// Running sums of estimation errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorSums {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ErrorSums {
    pub fn push(&mut self, e: f64) {
        self.n += 1;
        self.sum += e;
        self.sum_sq += e * e;
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn metric(&self) -> Result<Metric> {
        if self.n < 2 {
            return Err(Error::Study(format!("metrics need at least 2 values, got {}", self.n)));
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok(Metric {
            n: self.n,
            mean_error: mean,
            std_bias: std_bias(mean, var.sqrt()),
            mse: self.sum_sq / n,
        })
    }
}

fn std_bias(bias: f64, sd: f64) -> Option<f64> {
    if sd > 0.0 {
        Some(100.0 * bias.abs() / sd)
    } else if bias == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// Standardized bias and MSE of `estimates` around `truth`. Uses
/// two-pass moments; the SD has `n − 1` degrees of freedom.
pub fn compute_metrics(estimates: &[f64], truth: f64) -> Result<Metric> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::Study(format!("metrics need at least 2 values, got {n}")));
    }
    let errors: Vec<f64> = estimates.iter().map(|e| e - truth).collect();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Metric {
        n,
        mean_error: mean,
        std_bias: std_bias(mean, var.sqrt()),
        mse: errors.iter().map(|e| e * e).sum::<f64>() / n as f64,
    })
}

/// Type-7 quantile of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: SimScenario,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    /// Defaults to no standard errors, which studies do not summarize.
    #[serde(default = "study_fit_options")]
    pub fit: FitOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

fn study_fit_options() -> FitOptions {
    FitOptions {
        standard_errors: false,
        ..FitOptions::default()
    }
}

impl StudyConfig {
    pub fn new(scenario: SimScenario, methods: Vec<Method>, replicates: usize, seed: u64) -> Self {
        Self {
            scenario,
            methods,
            replicates,
            seed,
            fit: study_fit_options(),
            checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("a study needs at least one method".into()));
        }
        if self.replicates < 2 {
            return Err(Error::Config("a study needs at least 2 replicates".into()));
        }
        // Simulated data always carry both factors.
        if let Some(m) = self.methods.iter().find(|m| matches!(m, Method::Agh(k) if *k > 1)) {
            return Err(Error::Config(format!("{m} needs a single random-effect factor")));
        }
        Ok(())
    }

    /// Identifies the inputs a checkpoint was written for.
    fn fingerprint(&self) -> String {
        let methods: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        let payload = serde_json::json!({
            "scenario": self.scenario,
            "methods": methods,
            "replicates": self.replicates,
            "seed": self.seed,
            "fit": self.fit,
        });
        payload.to_string()
    }
}

pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    mix64(base ^ mix64(replicate as u64))
}

/// One method's outcome on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MethodRecord {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Pooled `û − u` per factor over observed levels.
    pub random_effects: Vec<ErrorSums>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub event_rate: f64,
    pub methods: Vec<MethodRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    fingerprint: String,
}

fn fit_seconds(f: &FitResult) -> f64 {
    let t = f.timings;
    t.tape_build + t.stage1 + t.stage2 + t.uncertainty
}

fn method_record(method: Method, fit: Result<FitResult>, truth_u: &[Vec<f64>]) -> MethodRecord {
    match fit {
        Ok(f) => {
            let random_effects = [&f.u1, &f.u2]
                .iter()
                .zip(truth_u)
                .map(|(est, tru)| {
                    let mut s = ErrorSums::default();
                    for (e, t) in est.iter().zip(tru) {
                        s.push(e - t);
                    }
                    s
                })
                .collect();
            MethodRecord {
                method,
                error: None,
                seconds: fit_seconds(&f),
                beta: f.beta,
                sigma: f.sigma,
                random_effects,
            }
        }
        Err(e) => MethodRecord {
            method,
            error: Some(e.to_string()),
            beta: vec![],
            sigma: vec![],
            random_effects: vec![],
            seconds: 0.0,
        },
    }
}

/// Generates replicate `r` and fits every method. HL11 and HL01 share
/// their first stage when both are requested; its time is charged to
/// both.
pub fn run_replicate(cfg: &StudyConfig, r: usize) -> Result<ReplicateRecord> {
    let seed = replicate_seed(cfg.seed, r);
    let sim = simulate(&cfg.scenario, seed)?;
    let (dataset, levels) = sim.dataset()?;
    let (u1, u2) = sim.truth.aligned(&levels);
    let truth_u = vec![u1, u2];
    let spec = GlmmSpec::new(cfg.scenario.family(), dataset)?;
    let pair = cfg.methods.contains(&Method::Hl11) && cfg.methods.contains(&Method::Hl01);
    let mut shared = if pair {
        Some(fit_hl_pair(&spec, &cfg.fit))
    } else {
        None
    };
    let methods = cfg
        .methods
        .iter()
        .map(|&m| {
            let result = match (&mut shared, m) {
                (Some(Ok((hl11, _))), Method::Hl11) => Ok(hl11.clone()),
                (Some(Ok((_, hl01))), Method::Hl01) => Ok(hl01.clone()),
                (Some(Err(e)), Method::Hl11 | Method::Hl01) => Err(Error::Study(e.to_string())),
                _ => fit(&spec, m, &cfg.fit),
            };
            method_record(m, result, &truth_u)
        })
        .collect();
    Ok(ReplicateRecord {
        replicate: r,
        seed,
        event_rate: sim.event_rate(),
        methods,
    })
}

fn read_checkpoint(path: &PathBuf, fingerprint: &str) -> Result<BTreeMap<usize, ReplicateRecord>> {
    let mut done = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e.into()),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else {
        return Ok(done);
    };
    let header: CheckpointHeader = serde_json::from_str(&first?)
        .map_err(|e| Error::Study(format!("checkpoint {} has no valid header: {e}", path.display())))?;
    if header.fingerprint != fingerprint {
        return Err(Error::Study(format!(
            "checkpoint {} was written for a different study configuration",
            path.display()
        )));
    }
    for line in lines {
        // A torn final line from an interrupted write is skipped.
        if let Ok(rec) = serde_json::from_str::<ReplicateRecord>(&line?) {
            done.insert(rec.replicate, rec);
        }
    }
    Ok(done)
}

fn open_checkpoint(path: &PathBuf, fingerprint: &str, fresh: bool) -> Result<File> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        let header = CheckpointHeader {
            schema_version: SCHEMA_VERSION,
            fingerprint: fingerprint.to_string(),
        };
        writeln!(file, "{}", serde_json::to_string(&header)?)?;
        file.flush()?;
    }
    Ok(file)
}

/// Runs (or resumes) every replicate and returns the records in
/// replicate order.
pub fn run_replicates(cfg: &StudyConfig) -> Result<Vec<ReplicateRecord>> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    let mut done = match &cfg.checkpoint {
        Some(p) => read_checkpoint(p, &fingerprint)?,
        None => BTreeMap::new(),
    };
    let sink = match &cfg.checkpoint {
        Some(p) => {
            let fresh = std::fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
            Some(Mutex::new(open_checkpoint(p, &fingerprint, fresh)?))
        }
        None => None,
    };
    let pending: Vec<usize> = (0..cfg.replicates).filter(|r| !done.contains_key(r)).collect();
    let fresh: Vec<Result<ReplicateRecord>> = pending
        .par_iter()
        .map(|&r| {
            let rec = run_replicate(cfg, r)?;
            if let Some(sink) = &sink {
                let line = serde_json::to_string(&rec)?;
                let mut f = sink.lock().map_err(|_| Error::Study("checkpoint lock poisoned".into()))?;
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            Ok(rec)
        })
        .collect();
    for rec in fresh {
        let rec = rec?;
        done.insert(rec.replicate, rec);
    }
    Ok(done.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricRow {
    pub method: Method,
    pub parameter: String,
    /// `None` for pooled random effects.
    pub truth: Option<f64>,
    pub mean: f64,
    pub std_bias: Option<f64>,
    pub mse: f64,
    /// Values summarized: replicates, or level-replicates when pooled.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MethodSummary {
    pub method: Method,
    pub replicates: usize,
    pub failures: usize,
    pub time_median: f64,
    pub time_iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Failure {
    pub replicate: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StudyReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub requested: usize,
    pub mean_event_rate: f64,
    pub methods: Vec<MethodSummary>,
    pub rows: Vec<MetricRow>,
    pub failures: Vec<Failure>,
}

impl StudyReport {
    pub fn row(&self, method: Method, parameter: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.parameter == parameter)
    }

    /// Equal apart from wall-clock fields.
    pub fn same_metrics(&self, other: &StudyReport) -> bool {
        let strip = |r: &StudyReport| {
            let mut r = r.clone();
            for m in &mut r.methods {
                m.time_median = 0.0;
                m.time_iqr = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "parameter", "truth", "mean", "std_bias", "mse", "n"])?;
        let opt = |v: Option<f64>, none: &str| v.map_or(none.to_string(), |x| x.to_string());
        for r in &self.rows {
            out.write_record([
                r.method.to_string(),
                r.parameter.clone(),
                opt(r.truth, ""),
                r.mean.to_string(),
                opt(r.std_bias, "inf"),
                r.mse.to_string(),
                r.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "replicates", "failures", "seconds_median", "seconds_iqr"])?;
        for m in &self.methods {
            out.write_record([
                m.method.to_string(),
                m.replicates.to_string(),
                m.failures.to_string(),
                m.time_median.to_string(),
                m.time_iqr.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parameter_names(s: &SimScenario) -> Vec<String> {
    match s.outcome {
        OutcomeKind::Binary => vec!["intercept".into()],
        OutcomeKind::PoissonCounts => s.design().column_names().unwrap_or_default(),
    }
}

/// Summarizes replicate records. Parameters with fewer than two
/// successful fits are omitted.
pub fn summarize(cfg: &StudyConfig, records: &[ReplicateRecord]) -> StudyReport {
    let names = parameter_names(&cfg.scenario);
    let truth_beta = cfg.scenario.true_beta();
    let truth_sigma = [cfg.scenario.sigma_ip, cfg.scenario.sigma_hcf];
    let mut rows = Vec::new();
    let mut methods = Vec::new();
    let mut failures = Vec::new();
    for (k, &method) in cfg.methods.iter().enumerate() {
        let ok: Vec<&MethodRecord> = records
            .iter()
            .filter_map(|r| r.methods.get(k))
            .filter(|m| m.error.is_none())
            .collect();
        for r in records {
            if let Some(MethodRecord { error: Some(e), .. }) = r.methods.get(k) {
                failures.push(Failure {
                    replicate: r.replicate,
                    method,
                    error: e.clone(),
                });
            }
        }
        let mut push = |parameter: String, truth: Option<f64>, sums: ErrorSums| {
            if let Ok(m) = sums.metric() {
                rows.push(MetricRow {
                    method,
                    mean: m.mean_error + truth.unwrap_or(0.0),
                    parameter,
                    truth,
                    std_bias: m.std_bias,
                    mse: m.mse,
                    n: m.n,
                });
            }
        };
        for (j, name) in names.iter().enumerate() {
            let mut s = ErrorSums::default();
            for m in &ok {
                s.push(m.beta[j] - truth_beta[j]);
            }
            push(name.clone(), Some(truth_beta[j]), s);
        }
        for (j, name) in ["sigma_IP", "sigma_HCF"].iter().enumerate() {
            let mut s = ErrorSums::default();
            for m in &ok {
                if let Some(v) = m.sigma.get(j) {
                    s.push(v - truth_sigma[j]);
                }
            }
            push(name.to_string(), Some(truth_sigma[j]), s);
        }
        for (j, name) in ["u_IP", "u_HCF"].iter().enumerate() {
            let mut s = ErrorSums::default();
            for m in &ok {
                if let Some(e) = m.random_effects.get(j) {
                    s.merge(e);
                }
            }
            push(name.to_string(), None, s);
        }
        let mut times: Vec<f64> = ok.iter().map(|m| m.seconds).collect();
        times.sort_by(f64::total_cmp);
        methods.push(MethodSummary {
            method,
            replicates: ok.len(),
            failures: records.len() - ok.len(),
            time_median: quantile(&times, 0.5),
            time_iqr: quantile(&times, 0.75) - quantile(&times, 0.25),
        });
    }
    let mean_event_rate = records.iter().map(|r| r.event_rate).sum::<f64>() / records.len().max(1) as f64;
    StudyReport {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.name.clone(),
        seed: cfg.seed,
        requested: cfg.replicates,
        mean_event_rate,
        methods,
        rows,
        failures,
    }
}

/// Runs a study and summarizes it.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let records = run_replicates(cfg)?;
    Ok(summarize(cfg, &records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::preset;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!((m.std_bias, m.mse), (Some(0.0), 0.0));
        let m = compute_metrics(&[0.9, 1.1], 1.0).unwrap();
        assert!(m.std_bias.unwrap() < 1e-9);
        assert!((m.mse - 0.01).abs() < 1e-12);
        let m = compute_metrics(&[1.1, 1.3], 1.0).unwrap();
        assert!((m.std_bias.unwrap() - 100.0 * 0.2 / 0.02f64.sqrt()).abs() < 1e-9);
        assert!((m.std_bias.unwrap() - 141.421).abs() < 1e-3);
        assert!((m.mse - 0.05).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_flags_infinite_bias() {
        let m = compute_metrics(&[2.0, 2.0], 1.0).unwrap();
        assert_eq!(m.std_bias, None);
        assert!(compute_metrics(&[1.0], 1.0).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert!(quantile(&[], 0.5).is_nan());
    }

    proptest! {
        #[test]
        fn mse_dominates_squared_bias(xs in proptest::collection::vec(-10.0f64..10.0, 2..40), truth in -5.0f64..5.0) {
            let m = compute_metrics(&xs, truth).unwrap();
            prop_assert!(m.mse + 1e-9 >= m.mean_error * m.mean_error);
            let mut s = ErrorSums::default();
            for x in &xs {
                s.push(x - truth);
            }
            let p = s.metric().unwrap();
            prop_assert!((p.mse - m.mse).abs() < 1e-9);
            prop_assert!((p.mean_error - m.mean_error).abs() < 1e-9);
        }
    }

    fn small_config() -> StudyConfig {
        StudyConfig::new(
            preset("binary-more-nested-100x5").unwrap(),
            vec![Method::Hl11, Method::Hl01],
            4,
            17,
        )
    }

    #[test]
    fn studies_are_deterministic_and_resumable() {
        let cfg = small_config();
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert!(a.same_metrics(&b));
        for m in &a.methods {
            assert_eq!(m.replicates + m.failures, cfg.replicates);
        }
        assert!(a.row(Method::Hl11, "sigma_IP").is_some());
        assert!(a.row(Method::Hl01, "u_IP").unwrap().truth.is_none());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.jsonl");
        let partial = StudyConfig {
            checkpoint: Some(path.clone()),
            ..cfg.clone()
        };
        // Simulate an interrupted run: keep the header and two replicates,
        // plus a torn line.
        run_replicates(&partial).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(3).collect();
        std::fs::write(&path, format!("{}\n{{\"replicate\": 3, \"se", kept.join("\n"))).unwrap();
        let resumed = run_study(&partial).unwrap();
        assert!(resumed.same_metrics(&a));

        let mut other = partial.clone();
        other.seed = 18;
        assert!(matches!(run_study(&other), Err(Error::Study(_))));
    }

    #[test]
    fn thread_count_does_not_change_metrics() {
        let cfg = small_config();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_study(&cfg).unwrap());
        let b = three.install(|| run_study(&cfg).unwrap());
        assert!(a.same_metrics(&b));
    }

    #[test]
    fn higher_order_quadrature_is_rejected_for_two_factors() {
        let mut cfg = small_config();
        cfg.methods = vec![Method::Agh(5)];
        assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn report_csv_has_one_row_per_parameter_and_method() {
        let cfg = small_config();
        let report = run_study(&cfg).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,parameter,truth,mean,std_bias,mse,n"));
        assert_eq!(text.lines().count(), 1 + report.rows.len());
        let mut buf = Vec::new();
        report.write_timing_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
