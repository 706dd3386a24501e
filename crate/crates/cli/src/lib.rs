//! Library behind the `robust-lfd` command.
//!
//! [`run_scenario`] solves one scenario and writes its outputs;
//! [`run_preset`] expands a preset into scenarios and runs each of them.

pub mod config;
pub mod error;
pub mod presets;
pub mod solve;

use std::fs;
use std::path::{Path, PathBuf};

use robust_lfd::verify::{verify_solution, TestConfig, VerifyConfig, VerifyReport};
use robust_lfd::Execution;
use serde::Serialize;

pub use config::{load, Loaded, Scenario};
pub use error::CliError;
pub use solve::{solve, Details, Outcome};

pub const LFD0_FILE: &str = "lfd0.csv";
pub const LFD1_FILE: &str = "lfd1.csv";
pub const LRF_FILE: &str = "lrf.csv";
pub const SOLUTION_FILE: &str = "solution.json";
pub const VERIFY_FILE: &str = "verify.json";
pub const CONFIG_FILE: &str = "config.json";

/// Whether verification runs: only when the scenario asks for it, or always.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    IfRequested,
    Always,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    schema_version: u32,
    name: &'a str,
    class_kind: &'a str,
    grid: GridOut,
    #[serde(flatten)]
    details: &'a Details,
    /// `|mass - 1|` of the two LFDs.
    mass_residuals: [f64; 2],
}

#[derive(Serialize)]
struct GridOut {
    x_min: f64,
    x_max: f64,
    n: usize,
}

#[derive(Serialize)]
struct VerifyFile<'a> {
    schema_version: u32,
    name: &'a str,
    seed: u64,
    all_pass: bool,
    #[serde(flatten)]
    report: &'a VerifyReport,
}

fn check_finite(name: &str, values: &[f64]) -> Result<(), CliError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CliError::Convergence(format!("{name} has a non-finite value at grid point {i}"))),
        None => Ok(()),
    }
}

/// Writes `x` and the given columns; floats use the shortest decimal
/// representation that round-trips.
fn write_csv(path: &Path, x: &[f64], columns: &[(&str, &[f64])]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x"];
    header.extend(columns.iter().map(|c| c.0));
    w.write_record(&header)?;
    for (i, xi) in x.iter().enumerate() {
        let mut row = vec![format!("{xi:?}")];
        row.extend(columns.iter().map(|c| format!("{:?}", c.1[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Directory a loaded scenario writes to when no override is given.
pub fn default_output_dir(loaded: &Loaded) -> PathBuf {
    match &loaded.scenario.output_dir {
        Some(d) => loaded.base_dir.join(d),
        None => loaded.base_dir.clone(),
    }
}

/// Verification settings of a scenario, falling back to the defaults.
pub fn verify_config(scenario: &Scenario) -> VerifyConfig {
    let v = scenario.verify.unwrap_or_default();
    VerifyConfig {
        test: TestConfig {
            threshold: v.threshold,
            prior0: v.prior0,
            sample_size: v.sample_size,
            trials: v.trials,
            seed: scenario.seed,
        },
        members: v.members,
        thresholds: v.thresholds,
    }
}

/// Solves a scenario and writes its outputs into `out_dir`.
pub fn run_scenario(loaded: &Loaded, out_dir: &Path, mode: VerifyMode) -> Result<RunSummary, CliError> {
    let s = &loaded.scenario;
    let outcome = solve(loaded)?;
    check_finite("robust_lr", &outcome.robust_lr)?;
    check_finite("nominal_lr", &outcome.nominal_lr)?;
    check_finite("lfd0", outcome.lfd0.values())?;
    check_finite("lfd1", outcome.lfd1.values())?;

    let verify = mode == VerifyMode::Always || s.verify.is_some();
    let report = if verify {
        let cfg = verify_config(s);
        Some(verify_solution(
            &outcome.lfd0,
            &outcome.lfd1,
            &outcome.robust_lr,
            outcome.sampler.as_deref(),
            &cfg,
            Execution::default(),
        )?)
    } else {
        None
    };

    fs::create_dir_all(out_dir)?;
    let x = outcome.grid.points();
    write_csv(&out_dir.join(LFD0_FILE), &x, &[("density", outcome.lfd0.values())])?;
    write_csv(&out_dir.join(LFD1_FILE), &x, &[("density", outcome.lfd1.values())])?;
    write_csv(
        &out_dir.join(LRF_FILE),
        &x,
        &[("robust_lr", &outcome.robust_lr), ("nominal_lr", &outcome.nominal_lr)],
    )?;
    let solution = SolutionFile {
        schema_version: config::SCHEMA_VERSION,
        name: &s.name,
        class_kind: s.class.kind(),
        grid: GridOut {
            x_min: outcome.grid.x_min(),
            x_max: outcome.grid.x_max(),
            n: outcome.grid.len(),
        },
        details: &outcome.details,
        mass_residuals: [(outcome.lfd0.mass() - 1.0).abs(), (outcome.lfd1.mass() - 1.0).abs()],
    };
    write_json(&out_dir.join(SOLUTION_FILE), &solution)?;
    let mut files: Vec<String> = [LFD0_FILE, LFD1_FILE, LRF_FILE, SOLUTION_FILE].map(String::from).to_vec();
    let mut verified = None;
    if let Some(report) = &report {
        let doc = VerifyFile {
            schema_version: config::SCHEMA_VERSION,
            name: &s.name,
            seed: s.seed,
            all_pass: report.all_pass(),
            report,
        };
        write_json(&out_dir.join(VERIFY_FILE), &doc)?;
        files.push(VERIFY_FILE.into());
        verified = Some(report.all_pass());
    }
    Ok(RunSummary {
        name: s.name.clone(),
        output_dir: out_dir.to_path_buf(),
        files,
        verified,
    })
}

/// Runs every scenario of a preset. Each run goes to `out_dir/<run>`, next
/// to the `config.json` that reproduces it.
pub fn run_preset(name: &str, out_dir: &Path) -> Result<Vec<RunSummary>, CliError> {
    let runs = presets::preset_runs(name).ok_or_else(|| {
        let known: Vec<&str> = presets::PRESETS.iter().map(|p| p.name).collect();
        CliError::config("preset", format!("unknown preset {name:?}, expected one of {}", known.join(", ")))
    })?;
    let mut summaries = Vec::with_capacity(runs.len());
    for r in runs {
        let dir = out_dir.join(&r.run);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CONFIG_FILE), r.scenario.to_json())?;
        let mut scenario = r.scenario;
        config::apply_seed_override(&mut scenario)?;
        scenario.validate()?;
        let loaded = Loaded {
            scenario,
            base_dir: dir.clone(),
        };
        let mut summary = run_scenario(&loaded, &dir, VerifyMode::IfRequested)?;
        summary.files.insert(0, CONFIG_FILE.into());
        summaries.push(summary);
    }
    Ok(summaries)
}
