use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use hlik_core::design::term_curve;
use hlik_core::io::{read_table, read_versioned, write_table};
use hlik_core::oracle::{compare, DEFAULT_ORACLE_NODES};
use hlik_core::quadrature::MAX_GRID_POINTS;
use hlik_core::simgen::{preset, preset_names, simulate};
use hlik_core::study::run_study;
use hlik_core::timing::{reduction_timing, run_ladder, single_factor_spec};
use hlik_core::{
    build_dataset, fit, fixtures, BenchReport, DesignSpec, Error, Family, FitOptions, FitReport, GlmmSpec, Method,
    OracleReport, Result, SimScenario, SimulationManifest, StudyConfig, StudyReport, SCHEMA_VERSION,
};
use schemars::Schema;
use serde::Serialize;

use crate::config::{BenchConfig, CommandConfig, FitConfig, OracleConfig, RunConfig, SimulateConfig, StudyRunConfig};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// A design document, or a versioned output that embeds one (simulation
/// manifest or fit report), which also names the family.
pub fn load_design(path: &Path) -> Result<(DesignSpec, Option<Family>)> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("schema_version").is_none() {
        return Ok((serde_json::from_value(value)?, None));
    }
    if value.get("truth").is_some() {
        let m: SimulationManifest = read_versioned(&text)?;
        let family = m.scenario.family();
        return Ok((m.design, Some(family)));
    }
    let r: FitReport = read_versioned(&text)?;
    Ok((r.design, Some(r.fit.family)))
}

fn load_scenario(preset_name: &Option<String>, path: &Option<std::path::PathBuf>) -> Result<SimScenario> {
    let s = match (preset_name, path) {
        (Some(name), _) => preset(name)?,
        (None, Some(p)) => serde_json::from_str(&read_text(p)?)?,
        (None, None) => return Err(Error::Config("no scenario given".into())),
    };
    s.validate()?;
    Ok(s)
}

/// Reads a dataset CSV and expands it under `design`.
fn load_spec(data: &Path, design: Option<&Path>, family: Option<Family>) -> Result<(GlmmSpec, DesignSpec, hlik_core::Levels)> {
    let (design, named) = match design {
        Some(p) => load_design(p)?,
        None => (DesignSpec::default(), None),
    };
    let family = family
        .or(named)
        .ok_or_else(|| Error::Config("--family is required unless the design document names one".into()))?;
    let file = File::open(data).map_err(|e| Error::Data(format!("cannot open {}: {e}", data.display())))?;
    let table = read_table(BufReader::new(file))?;
    let (dataset, levels) = build_dataset(&table, &design)?;
    Ok((GlmmSpec::new(family, dataset)?, design, levels))
}

pub fn fit_cmd(cfg: &FitConfig) -> Result<()> {
    let (spec, design, levels) = load_spec(&cfg.data, cfg.design.as_deref(), cfg.family)?;
    let result = fit(&spec, cfg.method, &cfg.fit_options())?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &cfg.curve_out {
        let cov = result.beta_covariance_matrix();
        let mut out = csv_writer(path)?;
        out.write_record(["term", "x", "fit", "se", "lower", "upper"])?;
        for column in &cfg.curves {
            for p in term_curve(&design, column, &result.beta, cov.as_ref(), cfg.curve_points)? {
                let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                out.write_record([
                    column.clone(),
                    p.x.to_string(),
                    p.fit.to_string(),
                    opt(p.se),
                    opt(p.lower),
                    opt(p.upper),
                ])?;
            }
        }
        out.flush()?;
    }
    write_json(&FitReport::new(design, levels, result), cfg.out.as_deref())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn simulate_cmd(cfg: &SimulateConfig) -> Result<()> {
    if cfg.list {
        for name in preset_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let scenario = load_scenario(&cfg.preset, &cfg.scenario)?;
    let seed = cfg.seed.unwrap_or(scenario.seed);
    let sim = simulate(&scenario, seed)?;
    let out = cfg.out.as_deref().ok_or_else(|| Error::Config("simulate needs --out".into()))?;
    let mut w = create(out)?;
    write_table(&mut w, &sim.table)?;
    w.flush()?;
    if let Some(path) = &cfg.manifest {
        let manifest = SimulationManifest {
            schema_version: SCHEMA_VERSION,
            design: scenario.design(),
            n_obs: sim.table.n(),
            event_rate: sim.event_rate(),
            truth: sim.truth.clone(),
            scenario,
            seed,
        };
        write_json(&manifest, Some(path))?;
    }
    eprintln!(
        "{}: {} observations, event rate {:.4}",
        sim.scenario.name,
        sim.table.n(),
        sim.event_rate()
    );
    Ok(())
}

pub fn study_cmd(cfg: &StudyRunConfig) -> Result<()> {
    let scenario = load_scenario(&cfg.preset, &cfg.scenario)?;
    let seed = cfg.seed.unwrap_or(scenario.seed);
    let mut study = StudyConfig::new(scenario, cfg.methods.clone(), cfg.replicates, seed);
    study.fit = FitOptions {
        standard_errors: cfg.standard_errors,
        ..study.fit
    };
    study.checkpoint = cfg.checkpoint.clone();
    let report = run_study(&study)?;
    for f in &report.failures {
        eprintln!("replicate {} {}: {}", f.replicate, f.method, f.error);
    }
    let named = cfg.out_csv.is_some() || cfg.out_json.is_some() || cfg.timing_csv.is_some();
    if let Some(p) = &cfg.out_csv {
        let mut w = create(p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &cfg.out_json {
        write_json(&report, Some(p))?;
    }
    if let Some(p) = &cfg.timing_csv {
        let mut w = create(p)?;
        report.write_timing_csv(&mut w)?;
        w.flush()?;
    }
    if !named {
        report.write_csv(io::stdout().lock())?;
    }
    Ok(())
}

/// Largest order whose tensor grid over `dim` effects fits the budget.
fn grid_nodes(dim: usize) -> usize {
    (1..=DEFAULT_ORACLE_NODES)
        .rev()
        .find(|&m| (m as f64).powi(dim as i32) <= MAX_GRID_POINTS)
        .unwrap_or(1)
}

pub fn oracle_cmd(cfg: &OracleConfig) -> Result<()> {
    let spec = match (&cfg.fixture, &cfg.data) {
        (Some(name), _) => fixtures::named(name)?,
        (None, Some(data)) => load_spec(data, cfg.design.as_deref(), cfg.family)?.0,
        (None, None) => return Err(Error::Config("give --fixture or --data".into())),
    };
    let (beta, sigma, fitted_phi) = match (&cfg.beta, &cfg.sigma) {
        (Some(b), Some(s)) => (b.clone(), s.clone(), None),
        _ => {
            let opts = FitOptions {
                standard_errors: false,
                ..FitOptions::default()
            };
            let f = fit(&spec, Method::Mle, &opts)?;
            let sigma = f.log_sd.iter().map(|l| l.exp()).collect();
            (f.beta, sigma, f.phi)
        }
    };
    let phi = cfg.phi.or(fitted_phi).unwrap_or(1.0);
    let layout = spec.layout();
    let oracle_nodes = cfg.oracle_nodes.unwrap_or(if layout.q2 == 0 {
        DEFAULT_ORACLE_NODES
    } else {
        grid_nodes(layout.q1 + layout.q2)
    });
    let report = compare(&spec, &beta, &sigma, phi, &cfg.nodes, oracle_nodes)?;
    match &cfg.out {
        Some(p) if p.extension().is_some_and(|e| e == "json") => write_json(&report, Some(p)),
        Some(p) => {
            let mut w = create(p)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => report.write_csv(io::stdout().lock()),
    }
}

pub fn bench_cmd(cfg: &BenchConfig) -> Result<()> {
    let opts = FitOptions::default();
    let ladder = run_ladder(&cfg.sizes, cfg.method, cfg.replicates, cfg.seed, &opts)?;
    let threads = if cfg.reduction_threads.is_empty() {
        let all = std::thread::available_parallelism().map_or(1, |n| n.get());
        if all > 1 {
            vec![1, all]
        } else {
            vec![1]
        }
    } else {
        cfg.reduction_threads.clone()
    };
    let spec = single_factor_spec(cfg.reduction_n_ip, cfg.seed)?;
    let reduction = reduction_timing(&spec, &threads, cfg.chunks, cfg.evaluations)?;
    let report = BenchReport {
        schema_version: SCHEMA_VERSION,
        ladder,
        reduction_n_obs: spec.dataset.n(),
        reduction,
    };
    if let Some(p) = &cfg.ladder_csv {
        let mut w = csv_writer(p)?;
        w.write_record(["n_ip", "n_obs", "replicates", "total", "tape_build", "stage1", "stage2", "uncertainty"])?;
        for r in &report.ladder.rows {
            w.write_record([
                r.n_ip.to_string(),
                r.n_obs.to_string(),
                r.replicates.to_string(),
                r.total.to_string(),
                r.tape_build.to_string(),
                r.stage1.to_string(),
                r.stage2.to_string(),
                r.uncertainty.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if let Some(p) = &cfg.reduction_csv {
        let mut w = csv_writer(p)?;
        w.write_record(["threads", "chunks", "evaluations", "seconds_per_evaluation", "speedup"])?;
        for r in &report.reduction {
            w.write_record([
                r.threads.to_string(),
                r.chunks.to_string(),
                r.evaluations.to_string(),
                r.seconds_per_evaluation.to_string(),
                r.speedup.to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_json(&report, cfg.out.as_deref())
}

pub fn run_command(cmd: &CommandConfig) -> Result<()> {
    cmd.validate()?;
    match cmd {
        CommandConfig::Fit(c) => fit_cmd(c),
        CommandConfig::Simulate(c) => simulate_cmd(c),
        CommandConfig::Study(c) => study_cmd(c),
        CommandConfig::Oracle(c) => oracle_cmd(c),
        CommandConfig::Bench(c) => bench_cmd(c),
    }
}

/// Every shipped JSON schema, by file stem.
pub fn schemas() -> Vec<(&'static str, Schema)> {
    vec![
        ("run-config", schemars::schema_for!(RunConfig)),
        ("design", schemars::schema_for!(DesignSpec)),
        ("scenario", schemars::schema_for!(SimScenario)),
        ("fit-report", schemars::schema_for!(FitReport)),
        ("simulation-manifest", schemars::schema_for!(SimulationManifest)),
        ("study-report", schemars::schema_for!(StudyReport)),
        ("oracle-report", schemars::schema_for!(OracleReport)),
        ("bench-report", schemars::schema_for!(BenchReport)),
    ]
}

pub fn schema_cmd(out_dir: Option<&Path>) -> Result<()> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for (name, schema) in schemas() {
                write_json(&schema, Some(&dir.join(format!("{name}.schema.json"))))?;
            }
            Ok(())
        }
        None => {
            let all: serde_json::Map<String, serde_json::Value> = schemas()
                .into_iter()
                .map(|(n, s)| (n.to_string(), s.to_value()))
                .collect();
            write_json(&all, None)
        }
    }
}

/// Identifies and re-reads a versioned output document.
pub fn inspect_cmd(path: &Path) -> Result<()> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let has = |k: &str| value.get(k).is_some();
    let summary = if has("fit") && has("levels") {
        let r: FitReport = read_versioned(&text)?;
        format!(
            "fit report: {} {} on {} observations, {} + {} levels",
            r.fit.method,
            r.fit.family.name(),
            r.fit.n_obs,
            r.fit.q1,
            r.fit.q2
        )
    } else if has("truth") {
        let m: SimulationManifest = read_versioned(&text)?;
        format!("simulation manifest: {} seed {}, {} observations", m.scenario.name, m.seed, m.n_obs)
    } else if has("rows") && has("requested") {
        let r: StudyReport = read_versioned(&text)?;
        format!("study report: {} x {} replicates, {} metric rows", r.scenario, r.requested, r.rows.len())
    } else if has("rows") && has("phi") {
        let r: OracleReport = read_versioned(&text)?;
        format!("oracle report: {} observations, {} rows", r.n_obs, r.rows.len())
    } else if has("ladder") {
        let r: BenchReport = read_versioned(&text)?;
        format!(
            "bench report: {} ladder sizes, growth exponent {:.3}",
            r.ladder.rows.len(),
            r.ladder.growth_exponent
        )
    } else {
        return Err(Error::Config(format!("{} is not a recognized output document", path.display())));
    };
    println!("{summary}");
    Ok(())
}

pub fn run_config(cfg: &RunConfig) -> Result<()> {
    run_command(&cfg.command)
}
