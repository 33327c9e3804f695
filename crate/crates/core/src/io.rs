//! Dataset CSV files and schema-versioned result documents.
//!
//! CSV layout: a mandatory header `ip_id,hcf_id,y,log_offset` followed by
//! raw covariate columns. A blank `hcf_id` in every row means a
//! single-factor model. Numbers are written in shortest round-trip form.

use std::io::{Read, Write};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::design::{DesignSpec, Levels, Table};
use crate::error::{Error, Result};
use crate::estimate::{FitResult, SCHEMA_VERSION};
use crate::simgen::Truth;

pub const FIXED_COLUMNS: [&str; 4] = ["ip_id", "hcf_id", "y", "log_offset"];

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("row {row}, column `{column}`: `{field}` is not a finite number")))
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 4 || header[..4] != FIXED_COLUMNS {
        return Err(Error::Data(format!(
            "CSV header must start with {}; found {}",
            FIXED_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let columns = header[4..].to_vec();
    let mut table = Table {
        ip_id: Vec::new(),
        hcf_id: Some(Vec::new()),
        y: Vec::new(),
        log_offset: Vec::new(),
        columns: columns.clone(),
        values: Vec::new(),
    };
    let mut hcf = Vec::new();
    let mut blanks = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Data(format!("row {row}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let ip = rec[0].trim();
        if ip.is_empty() {
            return Err(Error::Data(format!("row {row}: empty ip_id")));
        }
        table.ip_id.push(ip.to_string());
        let h = rec[1].trim();
        if h.is_empty() {
            blanks += 1;
        }
        hcf.push(h.to_string());
        table.y.push(parse_number(&rec[2], row, "y")?);
        table.log_offset.push(parse_number(&rec[3], row, "log_offset")?);
        for (k, c) in columns.iter().enumerate() {
            table.values.push(parse_number(&rec[4 + k], row, c)?);
        }
    }
    if table.y.is_empty() {
        return Err(Error::Data("CSV has no observations".into()));
    }
    table.hcf_id = match blanks {
        0 => Some(hcf),
        b if b == table.y.len() => None,
        _ => return Err(Error::Data("hcf_id must be blank in every row or in none".into())),
    };
    Ok(table)
}

pub fn write_table<W: Write>(writer: W, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(table.columns.iter().map(String::as_str));
    w.write_record(&header)?;
    let m = table.columns.len();
    let mut rec = Vec::with_capacity(4 + m);
    for i in 0..table.n() {
        rec.clear();
        rec.push(table.ip_id[i].clone());
        rec.push(table.hcf_id.as_ref().map_or(String::new(), |h| h[i].clone()));
        rec.push(table.y[i].to_string());
        rec.push(table.log_offset[i].to_string());
        rec.extend(table.values[i * m..(i + 1) * m].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Output of `hlik fit`: the estimates plus everything needed to
/// interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FitReport {
    pub schema_version: u32,
    pub design: DesignSpec,
    /// Labels of `fit.u1` and `fit.u2`, in order.
    pub levels: Levels,
    pub fit: FitResult,
}

impl FitReport {
    pub fn new(design: DesignSpec, levels: Levels, fit: FitResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            design,
            levels,
            fit,
        }
    }
}

/// Sidecar written by `hlik simulate` next to the dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SimulationManifest {
    pub schema_version: u32,
    pub scenario: crate::simgen::SimScenario,
    pub seed: u64,
    pub design: DesignSpec,
    pub truth: Truth,
    pub n_obs: usize,
    pub event_rate: f64,
}

/// Reads a schema-versioned JSON document, rejecting other versions.
pub fn read_versioned<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(serde_json::from_value(value)?),
        Some(v) => Err(Error::Config(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        ))),
        None => Err(Error::Config("document has no schema_version".into())),
    }
}
