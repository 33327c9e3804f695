//! Raw observation tables and their expansion into model datasets.
//!
//! Tables carry covariates as recorded; spline columns are expanded here
//! from a [`DesignSpec`], so knot choices travel with the fit rather than
//! with the data.

use std::collections::HashMap;

use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::splines::{KnotSpec, SplineBasis};

/// One row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub ip_id: Vec<String>,
    /// `None` for single-factor data.
    pub hcf_id: Option<Vec<String>>,
    pub y: Vec<f64>,
    pub log_offset: Vec<f64>,
    pub columns: Vec<String>,
    /// Row-major `n x columns.len()`.
    pub values: Vec<f64>,
}

impl Table {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("design refers to missing column `{name}`")))?;
        let m = self.columns.len();
        Ok((0..self.n()).map(|i| self.values[i * m + k]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub column: String,
    /// Natural-spline expansion; a plain linear term when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spline: Option<KnotSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub terms: Vec<Term>,
}

fn default_true() -> bool {
    true
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            intercept: true,
            terms: Vec::new(),
        }
    }
}

impl DesignSpec {
    /// Expanded column names.
    pub fn column_names(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        if self.intercept {
            names.push("intercept".to_string());
        }
        for t in &self.terms {
            match &t.spline {
                Some(k) => {
                    let dim = SplineBasis::from_spec(k)?.dim();
                    names.extend((1..=dim).map(|j| format!("{}_ns{j}", t.column)));
                }
                None => names.push(t.column.clone()),
            }
        }
        Ok(names)
    }
}

/// One point of a fitted spline term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CurvePoint {
    pub x: f64,
    /// Contribution to the linear predictor, zero at the lower boundary.
    pub fit: f64,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Evaluates the spline term on `column` over an even grid spanning its
/// boundary knots. The band is pointwise 95% by the delta method,
/// `se(x)² = b(x)ᵀ Σ b(x)` with `Σ` the covariance of the term's
/// coefficients.
pub fn term_curve(
    design: &DesignSpec,
    column: &str,
    beta: &[f64],
    cov: Option<&DMatrix<f64>>,
    points: usize,
) -> Result<Vec<CurvePoint>> {
    let mut offset = usize::from(design.intercept);
    let mut found = None;
    for t in &design.terms {
        let dim = match &t.spline {
            Some(k) => SplineBasis::from_spec(k)?.dim(),
            None => 1,
        };
        if t.column == column {
            let k = t
                .spline
                .as_ref()
                .ok_or_else(|| Error::Config(format!("term `{column}` is not a spline")))?;
            found = Some((SplineBasis::from_spec(k)?, offset));
            break;
        }
        offset += dim;
    }
    let (basis, offset) = found.ok_or_else(|| Error::Config(format!("design has no term `{column}`")))?;
    let dim = basis.dim();
    if beta.len() < offset + dim {
        return Err(Error::Config("coefficient vector is shorter than the design".into()));
    }
    let points = points.max(2);
    let (lo, hi) = basis.boundary();
    Ok((0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let b = basis.evaluate(x);
            let fit: f64 = b.iter().zip(&beta[offset..offset + dim]).map(|(a, c)| a * c).sum();
            let se = cov.map(|s| {
                let mut v = 0.0;
                for j in 0..dim {
                    for k in 0..dim {
                        v += b[j] * s[(offset + j, offset + k)] * b[k];
                    }
                }
                v.max(0.0).sqrt()
            });
            CurvePoint {
                x,
                fit,
                se,
                lower: se.map(|s| fit - Z95 * s),
                upper: se.map(|s| fit + Z95 * s),
            }
        })
        .collect())
}

/// Level labels in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Levels {
    pub ip: Vec<String>,
    pub hcf: Vec<String>,
}

/// Integer labels sort numerically, anything else lexicographically.
fn index_levels(ids: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut labels: Vec<String> = ids.to_vec();
    labels.sort_by(|a, b| match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        _ => a.cmp(b),
    });
    labels.dedup();
    let map: HashMap<&str, usize> = labels.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    (ids.iter().map(|s| map[s.as_str()]).collect(), labels)
}

/// Builds the model dataset: fixed effects from `design`, levels indexed
/// in sorted label order.
pub fn build_dataset(table: &Table, design: &DesignSpec) -> Result<(Dataset, Levels)> {
    let n = table.n();
    let names = design.column_names()?;
    let p = names.len();
    let mut x = vec![0.0; n * p];
    let mut col = 0;
    if design.intercept {
        for i in 0..n {
            x[i * p] = 1.0;
        }
        col = 1;
    }
    for t in &design.terms {
        let v = table.column(&t.column)?;
        match &t.spline {
            Some(k) => {
                let basis = SplineBasis::from_spec(k)?;
                for (i, &xi) in v.iter().enumerate() {
                    for (j, b) in basis.evaluate(xi).into_iter().enumerate() {
                        x[i * p + col + j] = b;
                    }
                }
                col += basis.dim();
            }
            None => {
                for (i, &xi) in v.iter().enumerate() {
                    x[i * p + col] = xi;
                }
                col += 1;
            }
        }
    }
    let (group1, ip) = index_levels(&table.ip_id);
    let (group2, hcf) = match &table.hcf_id {
        Some(ids) => {
            let (g, l) = index_levels(ids);
            (Some(g), l)
        }
        None => (None, Vec::new()),
    };
    let d = Dataset {
        y: table.y.clone(),
        offset: table.log_offset.clone(),
        x,
        p,
        group1,
        q1: ip.len(),
        q2: hcf.len(),
        group2,
        column_names: names,
    };
    d.validate()?;
    Ok((d, Levels { ip, hcf }))
}
