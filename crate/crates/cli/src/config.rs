//! Scenario files: schema, loading and validation.
//!
//! A scenario is a JSON document with a `schema_version`, a `name`, an
//! optional grid, a seed, one uncertainty `class` and an optional `verify`
//! section. Relative file references are resolved against the directory of
//! the scenario file.

use std::path::{Path, PathBuf};

use robust_lfd::band::scaled_gaussian;
use robust_lfd::{Grid, GridDensity};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "ROBUST_LFD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridParams>,
    #[serde(default)]
    pub seed: u64,
    pub class: ClassConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyOptions>,
    /// Output directory, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassConfig {
    Tv(NominalClass),
    LowerContamination(NominalClass),
    UpperContamination(NominalClass),
    Band(BandClass),
    Moment(ConstraintClass),
    Ppoint(ConstraintClass),
    Hybrid(ConstraintClass),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalClass {
    pub nominal0: Profile,
    pub nominal1: Profile,
    pub eps0: f64,
    pub eps1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandClass {
    pub g0_lower: Profile,
    pub g0_upper: Profile,
    pub g1_lower: Profile,
    pub g1_upper: Profile,
    /// Reference densities for the `nominal_lr` column. Defaults to the
    /// normalized lower bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal0: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal1: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintClass {
    pub constraints: Vec<ConstraintConfig>,
    /// Reference densities for the `nominal_lr` column. Without them the
    /// column repeats the robust ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal0: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal1: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<ConvexOptions>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    H0,
    H1,
}

/// One linear constraint. Missing bounds are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintConfig {
    /// `lower <= E[Y^power] <= upper`.
    Moment {
        hypothesis: Which,
        power: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
    /// `lower <= P[from <= Y < to] <= upper`.
    Probability {
        hypothesis: Which,
        from: f64,
        to: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_newton: Option<usize>,
}

/// A density shape on the grid: a scaled Gaussian or a two-column CSV file
/// (`x,value`) whose rows match the grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Gaussian {
        mean: f64,
        variance: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    File(PathBuf),
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    #[serde(default)]
    pub threshold: f64,
    #[serde(default = "half")]
    pub prior0: f64,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: usize,
}

fn half() -> f64 {
    0.5
}
fn default_sample_size() -> usize {
    10
}
fn default_trials() -> usize {
    10_000
}
fn default_members() -> usize {
    200
}
fn default_thresholds() -> usize {
    20
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            prior0: half(),
            sample_size: default_sample_size(),
            trials: default_trials(),
            members: default_members(),
            thresholds: default_thresholds(),
        }
    }
}

impl ClassConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassConfig::Tv(_) => "tv",
            ClassConfig::LowerContamination(_) => "lower_contamination",
            ClassConfig::UpperContamination(_) => "upper_contamination",
            ClassConfig::Band(_) => "band",
            ClassConfig::Moment(_) => "moment",
            ClassConfig::Ppoint(_) => "ppoint",
            ClassConfig::Hybrid(_) => "hybrid",
        }
    }

    fn is_convex(&self) -> bool {
        matches!(self, ClassConfig::Moment(_) | ClassConfig::Ppoint(_) | ClassConfig::Hybrid(_))
    }
}

/// A scenario together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
}

impl Scenario {
    /// Parses a scenario, reporting the JSON path of the first bad field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().to_string();
            let mut path = e.path().to_string();
            // a missing field is reported at its parent; point at the field
            if let Some(field) = missing_field(&message) {
                path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
            }
            CliError::config(path, message)
        })?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        match self.grid {
            Some(p) => Grid::new(p.x_min, p.x_max, p.n).map_err(|e| CliError::config("grid", e.to_string())),
            None if self.class.is_convex() => Ok(Grid::convex_default()),
            None => Ok(Grid::standard()),
        }
    }

    /// Checks the parts of the scenario that do not need the solvers.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema_version",
                format!("unsupported schema_version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.is_empty() {
            return Err(CliError::config("name", "name must not be empty"));
        }
        self.grid()?;
        let eps = |c: &NominalClass, upper_ok: bool| -> Result<(), CliError> {
            for (field, e) in [("eps0", c.eps0), ("eps1", c.eps1)] {
                let ok = if upper_ok { e >= 0.0 && e.is_finite() } else { (0.0..1.0).contains(&e) };
                if !ok {
                    return Err(CliError::config(format!("class.{field}"), format!("{field} = {e} is out of range")));
                }
            }
            Ok(())
        };
        match &self.class {
            ClassConfig::Tv(c) | ClassConfig::LowerContamination(c) => eps(c, false)?,
            ClassConfig::UpperContamination(c) => eps(c, true)?,
            ClassConfig::Band(_) => {}
            ClassConfig::Moment(c) | ClassConfig::Ppoint(c) | ClassConfig::Hybrid(c) => {
                if c.constraints.is_empty() {
                    return Err(CliError::config("class.constraints", "at least one constraint is required"));
                }
                for (k, con) in c.constraints.iter().enumerate() {
                    let path = format!("class.constraints[{k}]");
                    let allowed = !matches!(
                        (&self.class, con),
                        (ClassConfig::Moment(_), ConstraintConfig::Probability { .. })
                            | (ClassConfig::Ppoint(_), ConstraintConfig::Moment { .. })
                    );
                    if !allowed {
                        return Err(CliError::config(
                            path,
                            format!("constraint type not allowed in a {} class", self.class.kind()),
                        ));
                    }
                    let (lower, upper) = con.bounds();
                    if lower.is_none() && upper.is_none() {
                        return Err(CliError::config(path, "constraint needs a lower or an upper bound"));
                    }
                    if let ConstraintConfig::Moment { power: 0, .. } = con {
                        return Err(CliError::config(format!("{path}.power"), "power must be positive"));
                    }
                }
                if let Some(us) = c.solver.as_ref().and_then(|s| s.u_grid.as_ref()) {
                    if us.len() < 3 || us.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
                        return Err(CliError::config(
                            "class.solver.u_grid",
                            "u_grid needs at least three points inside (0, 1)",
                        ));
                    }
                }
            }
        }
        if let Some(v) = &self.verify {
            if !(v.prior0 > 0.0 && v.prior0 < 1.0) {
                return Err(CliError::config("verify.prior0", "prior0 must lie in (0, 1)"));
            }
            if v.sample_size == 0 {
                return Err(CliError::config("verify.sample_size", "sample_size must be positive"));
            }
            if v.trials == 0 {
                return Err(CliError::config("verify.trials", "trials must be positive"));
            }
            if !v.threshold.is_finite() {
                return Err(CliError::config("verify.threshold", "threshold must be finite"));
            }
        }
        Ok(())
    }
}

impl ConstraintConfig {
    pub fn bounds(&self) -> (Option<f64>, Option<f64>) {
        match self {
            ConstraintConfig::Moment { lower, upper, .. } | ConstraintConfig::Probability { lower, upper, .. } => {
                (*lower, *upper)
            }
        }
    }
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Reads and validates a scenario file. `ROBUST_LFD_SEED`, when set,
/// replaces the seed.
pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("", format!("cannot read {}: {e}", path.display())))?;
    let mut scenario = Scenario::from_json(&text)?;
    apply_seed_override(&mut scenario)?;
    scenario.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { scenario, base_dir })
}

pub fn apply_seed_override(scenario: &mut Scenario) -> Result<(), CliError> {
    if let Ok(raw) = std::env::var(SEED_ENV) {
        scenario.seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::config(SEED_ENV, format!("{SEED_ENV} = {raw:?} is not an unsigned integer")))?;
    }
    Ok(())
}

impl Profile {
    /// Values on `grid`, before any normalization.
    pub fn values(&self, grid: &Grid, base_dir: &Path, field: &str) -> Result<Vec<f64>, CliError> {
        match self {
            Profile::Gaussian { mean, variance, scale } => {
                if !(*variance > 0.0 && variance.is_finite() && mean.is_finite()) {
                    return Err(CliError::config(field, "gaussian needs a finite mean and a positive variance"));
                }
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(CliError::config(format!("{field}.scale"), "scale must be finite and nonnegative"));
                }
                scaled_gaussian(grid, *scale, *mean, *variance).map_err(|e| CliError::config(field, e.to_string()))
            }
            Profile::File(p) => read_profile(&base_dir.join(p), grid, field),
        }
    }

    /// A unit-mass density built from the profile.
    pub fn density(&self, grid: &Grid, base_dir: &Path, field: &str) -> Result<GridDensity, CliError> {
        if let Profile::Gaussian { scale, .. } = self {
            if *scale != 1.0 {
                return Err(CliError::config(format!("{field}.scale"), "a nominal density cannot be scaled"));
            }
        }
        let v = self.values(grid, base_dir, field)?;
        GridDensity::normalized(*grid, v).map_err(|e| CliError::config(field, e.to_string()))
    }
}

fn read_profile(path: &Path, grid: &Grid, field: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::config(field, format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    for (i, row) in reader.deserialize::<(f64, f64)>().enumerate() {
        let (x, v) = row.map_err(|e| bad(e.to_string()))?;
        if i >= grid.len() {
            return Err(bad(format!("more rows than the {} grid points", grid.len())));
        }
        let xi = grid.point(i);
        if (x - xi).abs() > 1e-9 * (1.0 + xi.abs()) {
            return Err(bad(format!("row {i} has x = {x}, expected grid point {xi}")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(bad(format!("row {i} has value {v}")));
        }
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(bad(format!("{} rows, expected {}", values.len(), grid.len())));
    }
    Ok(values)
}
