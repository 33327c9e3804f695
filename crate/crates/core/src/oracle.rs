//! Marginal log-likelihood comparison: Laplace, adaptive Gauss-Hermite and
//! the brute-force quadrature oracle at fixed parameters.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::SCHEMA_VERSION;
use crate::laplace::{laplace_marginal_loglik, Designated};
use crate::model::{GlmmSpec, ParamState};
use crate::quadrature::{agh_marginal, gh_nodes, oracle_marginal_loglik, Groups};

pub const DEFAULT_ORACLE_NODES: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ComparisonRow {
    /// `LA`, `AGH` or `ORACLE`.
    pub method: String,
    /// Quadrature nodes per dimension; absent for `LA`.
    pub nodes: Option<usize>,
    pub loglik: f64,
    pub diff_vs_laplace: f64,
    pub diff_vs_oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OracleReport {
    pub schema_version: u32,
    pub n_obs: usize,
    pub q1: usize,
    pub q2: usize,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub phi: f64,
    pub rows: Vec<ComparisonRow>,
}

impl OracleReport {
    pub fn row(&self, method: &str, nodes: Option<usize>) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method && r.nodes == nodes)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "nodes", "loglik", "diff_vs_laplace", "diff_vs_oracle"])?;
        for r in &self.rows {
            out.write_record([
                r.method.clone(),
                r.nodes.map_or(String::new(), |m| m.to_string()),
                r.loglik.to_string(),
                r.diff_vs_laplace.to_string(),
                r.diff_vs_oracle.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates every approximation at `(β, σ, φ)`. AGH rows need a
/// single-factor model; two-factor models get the Laplace and tensor-grid
/// oracle rows only.
pub fn compare(spec: &GlmmSpec, beta: &[f64], sigma: &[f64], phi: f64, agh_nodes: &[usize], oracle_nodes: usize) -> Result<OracleReport> {
    let layout = spec.layout();
    if beta.len() != layout.p || sigma.len() != layout.r {
        return Err(Error::Config(format!(
            "expected {} coefficients and {} standard deviations, got {} and {}",
            layout.p,
            layout.r,
            beta.len(),
            sigma.len()
        )));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) || !(phi.is_finite() && phi > 0.0) {
        return Err(Error::Config("standard deviations and dispersion must be positive".into()));
    }
    let mut params = ParamState::zeros(&layout);
    params.beta = beta.to_vec();
    params.log_sd = sigma.iter().map(|s| s.ln()).collect();
    params.phi = phi;
    let la = laplace_marginal_loglik(spec, &params, Designated::RandomEffects)?;
    let oracle = oracle_marginal_loglik(spec, beta, sigma, phi, oracle_nodes)?;
    let mut raw = vec![("LA".to_string(), None, la)];
    if spec.dataset.group2.is_none() {
        let groups = Groups::new(spec)?;
        for &m in agh_nodes {
            let rule = gh_nodes(m)?;
            let mut modes = vec![0.0; groups.len()];
            let v = agh_marginal(spec, &groups, beta, sigma[0], phi, &rule, &mut modes)?;
            raw.push(("AGH".into(), Some(m), v));
        }
    }
    raw.push(("ORACLE".into(), Some(oracle_nodes), oracle));
    Ok(OracleReport {
        schema_version: SCHEMA_VERSION,
        n_obs: spec.dataset.n(),
        q1: layout.q1,
        q2: layout.q2,
        beta: beta.to_vec(),
        sigma: sigma.to_vec(),
        phi,
        rows: raw
            .into_iter()
            .map(|(method, nodes, loglik)| ComparisonRow {
                method,
                nodes,
                loglik,
                diff_vs_laplace: loglik - la,
                diff_vs_oracle: loglik - oracle,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn one_node_matches_laplace() {
        let spec = fixtures::bernoulli_single();
        let r = compare(&spec, &[-0.4], &[0.9], 1.0, &[1, 5, 20], DEFAULT_ORACLE_NODES).unwrap();
        assert_eq!(r.rows.len(), 5);
        assert!(r.row("AGH", Some(1)).unwrap().diff_vs_laplace.abs() <= 1e-10);
        assert!(r.row("AGH", Some(20)).unwrap().diff_vs_oracle.abs() < 1e-8);
        assert_eq!(r.row("ORACLE", Some(51)).unwrap().diff_vs_oracle, 0.0);
    }

    #[test]
    fn two_factor_skips_agh_rows() {
        let spec = fixtures::poisson_two_factor();
        let r = compare(&spec, &[0.7], &[0.5, 0.3], 1.0, &[1, 3], 15).unwrap();
        assert_eq!(r.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["LA", "ORACLE"]);
        assert!(r.rows[0].diff_vs_oracle.abs() < 0.05 * r.rows[1].loglik.abs());
    }

    #[test]
    fn bad_parameters_are_config_errors() {
        let spec = fixtures::poisson_single();
        assert!(matches!(compare(&spec, &[1.0, 2.0], &[0.5], 1.0, &[1], 21), Err(Error::Config(_))));
        assert!(matches!(compare(&spec, &[1.0], &[0.0], 1.0, &[1], 21), Err(Error::Config(_))));
    }
}
