//! Run configuration. Every subcommand's settings can come from flags or
//! from a JSON file (`hlik run CONFIG`); both paths produce the same
//! structs and pass the same validation before any computation.

use std::path::PathBuf;

use clap::Args;
use hlik_core::estimate::SdScale;
use hlik_core::{Error, Family, FitOptions, Method, Result};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub const MAX_NODES: usize = hlik_core::quadrature::MAX_ORDER;

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown family `{s}` (poisson, bernoulli, gaussian)"))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sd_scale(s: &str) -> std::result::Result<SdScale, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown sd scale `{s}` (log, raw)"))
}

fn default_method() -> Method {
    Method::Hl11
}

fn default_curve_points() -> usize {
    101
}

fn default_study_methods() -> Vec<Method> {
    vec![Method::Hl11, Method::Hl01, Method::Mle]
}

fn default_replicates() -> usize {
    200
}

fn default_agh_nodes() -> Vec<usize> {
    vec![1, 2, 3, 5, 10, 25]
}

fn default_sizes() -> Vec<usize> {
    vec![300, 1000, 3000]
}

fn default_one() -> usize {
    1
}

fn default_seed() -> u64 {
    1
}

fn default_chunks() -> usize {
    hlik_core::model::DEFAULT_CHUNKS
}

fn default_evaluations() -> usize {
    20
}

fn default_reduction_n_ip() -> usize {
    1000
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_nodes(m: usize) -> Result<()> {
    if m == 0 || m > MAX_NODES {
        return Err(config(format!("quadrature nodes must be in 1..={MAX_NODES}, got {m}")));
    }
    Ok(())
}

fn check_method(m: Method) -> Result<()> {
    match m {
        Method::Agh(k) => check_nodes(k),
        _ => Ok(()),
    }
}

/// Exactly one of a preset name or a scenario file.
fn check_scenario_source(preset: &Option<String>, scenario: &Option<PathBuf>) -> Result<()> {
    match (preset, scenario) {
        (Some(_), None) | (None, Some(_)) => Ok(()),
        _ => Err(config("give exactly one of --preset or --scenario")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Design JSON, or a simulation manifest or fit report carrying one;
    /// intercept only when absent.
    #[arg(long)]
    #[serde(default)]
    pub design: Option<PathBuf>,
    /// Taken from the design document when it names one.
    #[arg(long, value_parser = parse_family)]
    #[serde(default)]
    pub family: Option<Family>,
    #[arg(long, value_parser = parse_method, default_value = "HL11")]
    #[serde(default = "default_method")]
    pub method: Method,
    #[arg(long)]
    #[serde(default)]
    pub no_standard_errors: bool,
    #[arg(long)]
    #[serde(default)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub outer_max_iter: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub outer_grad_tol: Option<f64>,
    #[arg(long, value_parser = parse_sd_scale)]
    #[serde(default)]
    pub sd_scale: Option<SdScale>,
    /// Fit report path; stdout when absent.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Spline terms to tabulate, comma separated.
    #[arg(long = "curve", value_delimiter = ',')]
    #[serde(default)]
    pub curves: Vec<String>,
    #[arg(long)]
    #[serde(default)]
    pub curve_out: Option<PathBuf>,
    #[arg(long, default_value_t = default_curve_points())]
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        check_method(self.method)?;
        if !self.curves.is_empty() && self.curve_out.is_none() {
            return Err(config("--curve needs --curve-out"));
        }
        if self.curve_points < 2 {
            return Err(config("--curve-points must be at least 2"));
        }
        if self.inner_tol.is_some_and(|t| !(t > 0.0)) || self.outer_grad_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(config("tolerances must be positive"));
        }
        if self.outer_max_iter == Some(0) {
            return Err(config("--outer-max-iter must be positive"));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        let mut o = FitOptions {
            standard_errors: !self.no_standard_errors,
            ..FitOptions::default()
        };
        if let Some(t) = self.inner_tol {
            o.inner_tol = t;
        }
        if let Some(n) = self.outer_max_iter {
            o.outer_max_iter = n;
        }
        if let Some(t) = self.outer_grad_tol {
            o.outer_grad_tol = t;
        }
        if let Some(s) = self.sd_scale {
            o.sd_scale = s;
        }
        o
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Built-in scenario name.
    #[arg(long)]
    #[serde(default)]
    pub preset: Option<String>,
    /// Scenario JSON.
    #[arg(long)]
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Dataset CSV path.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Manifest JSON path: scenario, design and true values.
    #[arg(long)]
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Print the preset names and exit.
    #[arg(long)]
    #[serde(default)]
    pub list: bool,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.list {
            return Ok(());
        }
        check_scenario_source(&self.preset, &self.scenario)?;
        if self.out.is_none() {
            return Err(config("simulate needs --out"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StudyRunConfig {
    #[arg(long)]
    #[serde(default)]
    pub preset: Option<String>,
    #[arg(long)]
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "HL11,HL01,MLE")]
    #[serde(default = "default_study_methods")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = default_replicates())]
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Overrides the scenario seed.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Compute standard errors in every fit (not summarized; slower).
    #[arg(long)]
    #[serde(default)]
    pub standard_errors: bool,
    /// JSONL file of finished replicates; an existing file is resumed.
    #[arg(long)]
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Metrics CSV; stdout when no output is named.
    #[arg(long)]
    #[serde(default)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub timing_csv: Option<PathBuf>,
}

impl StudyRunConfig {
    pub fn validate(&self) -> Result<()> {
        check_scenario_source(&self.preset, &self.scenario)?;
        self.methods.iter().try_for_each(|m| check_method(*m))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Built-in fixture name.
    #[arg(long)]
    #[serde(default)]
    pub fixture: Option<String>,
    /// Dataset CSV, as for `fit`.
    #[arg(long)]
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub design: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    #[serde(default)]
    pub family: Option<Family>,
    /// Fixed effects; with `sigma`, replaces the default of the MLE fit.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    /// Residual variance; Gaussian only.
    #[arg(long)]
    #[serde(default)]
    pub phi: Option<f64>,
    /// AGH orders to tabulate (single-factor models).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10,25")]
    #[serde(default = "default_agh_nodes")]
    pub nodes: Vec<usize>,
    /// Oracle nodes per dimension; 51 for single-factor models, the
    /// largest order within the grid budget otherwise.
    #[arg(long)]
    #[serde(default)]
    pub oracle_nodes: Option<usize>,
    /// `.json` writes the report, anything else CSV; CSV on stdout when
    /// absent.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.fixture, &self.data) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(config("give exactly one of --fixture or --data")),
        }
        if self.fixture.is_some() && (self.design.is_some() || self.family.is_some()) {
            return Err(config("--design and --family apply to --data only"));
        }
        if self.beta.is_some() != self.sigma.is_some() {
            return Err(config("--beta and --sigma go together"));
        }
        self.nodes.iter().try_for_each(|m| check_nodes(*m))?;
        self.oracle_nodes.map_or(Ok(()), check_nodes)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Patient counts of the single-factor ladder. Below about 300 the
    /// simulated data have too few events for the spline design.
    #[arg(long, value_delimiter = ',', default_value = "300,1000,3000")]
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[arg(long, value_parser = parse_method, default_value = "HL11")]
    #[serde(default = "default_method")]
    pub method: Method,
    #[arg(long, default_value_t = 1)]
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[arg(long, default_value_t = default_seed())]
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Thread counts for the reduction timing; 1 and all cores when empty.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub reduction_threads: Vec<usize>,
    #[arg(long, default_value_t = default_chunks())]
    #[serde(default = "default_chunks")]
    pub chunks: usize,
    #[arg(long, default_value_t = default_evaluations())]
    #[serde(default = "default_evaluations")]
    pub evaluations: usize,
    /// Patients in the reduction-timing dataset.
    #[arg(long, default_value_t = default_reduction_n_ip())]
    #[serde(default = "default_reduction_n_ip")]
    pub reduction_n_ip: usize,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub ladder_csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub reduction_csv: Option<PathBuf>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        check_method(self.method)?;
        if self.sizes.len() < 2 || self.sizes.iter().any(|&n| n < 2) {
            return Err(config("--sizes needs at least two sizes of 2 or more patients"));
        }
        if self.replicates == 0 || self.chunks == 0 || self.evaluations == 0 || self.reduction_n_ip < 2 {
            return Err(config("replicates, chunks and evaluations must be positive"));
        }
        if self.reduction_threads.contains(&0) {
            return Err(config("thread counts must be positive"));
        }
        Ok(())
    }
}

/// One command's settings.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CommandConfig {
    Fit(FitConfig),
    Simulate(SimulateConfig),
    Study(StudyRunConfig),
    Oracle(OracleConfig),
    Bench(BenchConfig),
}

/// Contents of a file passed to `hlik run`.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; a `--threads` flag takes precedence.
    #[serde(default)]
    pub threads: Option<usize>,
    pub command: CommandConfig,
}

impl CommandConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            CommandConfig::Fit(c) => c.validate(),
            CommandConfig::Simulate(c) => c.validate(),
            CommandConfig::Study(c) => c.validate(),
            CommandConfig::Oracle(c) => c.validate(),
            CommandConfig::Bench(c) => c.validate(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.threads == Some(0) {
            return Err(config("threads must be positive"));
        }
        cfg.command.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_rejects_unknown_keys() {
        let ok = r#"{"command": {"simulate": {"preset": "poisson-nested-100x5", "out": "d.csv"}}}"#;
        assert!(RunConfig::from_json(ok).is_ok());
        let top = r#"{"threads": 2, "verbose": true, "command": {"simulate": {"list": true}}}"#;
        assert!(RunConfig::from_json(top).is_err());
        let inner = r#"{"command": {"fit": {"data": "d.csv", "methd": "HL11"}}}"#;
        assert!(RunConfig::from_json(inner).is_err());
    }

    #[test]
    fn validation_precedes_work() {
        let both = r#"{"command": {"study": {"preset": "a", "scenario": "b.json"}}}"#;
        assert!(matches!(RunConfig::from_json(both), Err(Error::Config(_))));
        let nodes = r#"{"command": {"oracle": {"fixture": "poisson-single", "nodes": [0]}}}"#;
        assert!(matches!(RunConfig::from_json(nodes), Err(Error::Config(_))));
        let threads = r#"{"threads": 0, "command": {"simulate": {"list": true}}}"#;
        assert!(matches!(RunConfig::from_json(threads), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_match_between_flags_and_files() {
        let from_file: StudyRunConfig = serde_json::from_str(r#"{"preset": "p"}"#).unwrap();
        assert_eq!(from_file.methods, default_study_methods());
        assert_eq!(from_file.replicates, 200);
        let fit: FitConfig = serde_json::from_str(r#"{"data": "d.csv", "method": "agh5"}"#).unwrap();
        assert_eq!(fit.method, Method::Agh(5));
        assert!(fit.fit_options().standard_errors);
        assert_eq!(parse_family("Poisson").unwrap(), Family::Poisson);
    }
}
