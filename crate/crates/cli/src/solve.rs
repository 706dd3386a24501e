//! Dispatch from a validated scenario to the solvers.

use std::path::Path;

use robust_lfd::band::{band_overlap_diagnostic, solve_band, BandSpec, BandSolution, BandType, Rule};
use robust_lfd::contamination::{solve_contamination, ContaminationSpec, Direction};
use robust_lfd::convex::{
    default_u_grid, minimize_over_u, u_dependence_metric, ConvexLfdResult, ConvexProblem, Hypothesis,
    LinearConstraint, SolverOptions,
};
use robust_lfd::grid::DENSITY_FLOOR;
use robust_lfd::tv::{solve_tv, TvSpec};
use robust_lfd::verify::{BandSampler, ClassSampler, ContaminationSampler, TvSampler};
use robust_lfd::{Grid, GridDensity};
use serde::Serialize;

use crate::config::{ClassConfig, ConstraintClass, ConstraintConfig, Loaded, NominalClass, Profile, Which};
use crate::error::CliError;

/// Points at which the convex LFDs are compared to measure u-dependence.
pub const U_DEPENDENCE_PROBES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Solved pair plus everything the writers need.
pub struct Outcome {
    pub grid: Grid,
    pub lfd0: GridDensity,
    pub lfd1: GridDensity,
    pub robust_lr: Vec<f64>,
    pub nominal_lr: Vec<f64>,
    pub details: Details,
    /// Member sampler of the class, when one exists.
    pub sampler: Option<Box<dyn ClassSampler>>,
}

/// Class-specific part of `solution.json`.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Details {
    Tv {
        t_l: f64,
        t_u: f64,
        beta: f64,
        sigma: f64,
        degenerate: bool,
        residuals: [f64; 2],
    },
    Contamination {
        direction: &'static str,
        t_l: f64,
        t_u: f64,
        degenerate: bool,
        residuals: [f64; 2],
    },
    Band {
        band_type: BandType,
        template: BandType,
        k1: f64,
        k2: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        interior_mass: Option<f64>,
        regions: Vec<RegionSummary>,
        overlap_measure: f64,
    },
    Convex {
        u_star: f64,
        objective: f64,
        kkt_residual: f64,
        max_violation: f64,
        active_constraints: Vec<usize>,
        u_dependence: f64,
        profile: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionSummary {
    pub rule: Rule,
    pub points: usize,
    /// Closed x-intervals covered by the region.
    pub intervals: Vec<(f64, f64)>,
}

pub fn ratio(g0: &[f64], g1: &[f64]) -> Vec<f64> {
    g0.iter().zip(g1).map(|(a, b)| b.max(DENSITY_FLOOR) / a.max(DENSITY_FLOOR)).collect()
}

pub fn solve(loaded: &Loaded) -> Result<Outcome, CliError> {
    let s = &loaded.scenario;
    let grid = s.grid()?;
    let base = loaded.base_dir.as_path();
    match &s.class {
        ClassConfig::Tv(c) => solve_tv_class(grid, c, base),
        ClassConfig::LowerContamination(c) => solve_contamination_class(grid, c, base, Direction::Lower),
        ClassConfig::UpperContamination(c) => solve_contamination_class(grid, c, base, Direction::Upper),
        ClassConfig::Band(c) => {
            let v = |p: &Profile, f: &str| p.values(&grid, base, &format!("class.{f}"));
            let spec = BandSpec::new(
                grid,
                v(&c.g0_lower, "g0_lower")?,
                v(&c.g0_upper, "g0_upper")?,
                v(&c.g1_lower, "g1_lower")?,
                v(&c.g1_upper, "g1_upper")?,
            )
            .map_err(|e| CliError::config("class", e.to_string()))?;
            let sol = solve_band(&spec)?;
            let nominal_lr = match (&c.nominal0, &c.nominal1) {
                (Some(a), Some(b)) => nominal_ratio(&grid, base, a, b)?,
                (None, None) => ratio(spec.g0_lower(), spec.g1_lower()),
                _ => return Err(CliError::config("class", "give both nominal0 and nominal1 or neither")),
            };
            Ok(band_outcome(grid, spec, sol, nominal_lr))
        }
        ClassConfig::Moment(c) | ClassConfig::Ppoint(c) | ClassConfig::Hybrid(c) => {
            solve_convex_class(grid, c, base)
        }
    }
}

fn nominals(grid: &Grid, c: &NominalClass, base: &Path) -> Result<(GridDensity, GridDensity), CliError> {
    Ok((
        c.nominal0.density(grid, base, "class.nominal0")?,
        c.nominal1.density(grid, base, "class.nominal1")?,
    ))
}

fn nominal_ratio(grid: &Grid, base: &Path, a: &Profile, b: &Profile) -> Result<Vec<f64>, CliError> {
    let f0 = a.density(grid, base, "class.nominal0")?;
    let f1 = b.density(grid, base, "class.nominal1")?;
    Ok(ratio(f0.values(), f1.values()))
}

fn solve_tv_class(grid: Grid, c: &NominalClass, base: &Path) -> Result<Outcome, CliError> {
    let (f0, f1) = nominals(&grid, c, base)?;
    let spec = TvSpec::new(f0, f1, c.eps0, c.eps1)?;
    let sol = solve_tv(&spec)?;
    Ok(Outcome {
        grid,
        nominal_lr: spec.nominal_ratio().to_vec(),
        robust_lr: sol.robust_lrf,
        lfd0: sol.lfd0,
        lfd1: sol.lfd1,
        details: Details::Tv {
            t_l: sol.t_l,
            t_u: sol.t_u,
            beta: sol.beta,
            sigma: sol.sigma,
            degenerate: sol.degenerate,
            residuals: sol.residuals,
        },
        sampler: Some(Box::new(TvSampler(spec))),
    })
}

fn solve_contamination_class(
    grid: Grid,
    c: &NominalClass,
    base: &Path,
    direction: Direction,
) -> Result<Outcome, CliError> {
    let (f0, f1) = nominals(&grid, c, base)?;
    let spec = ContaminationSpec::new(direction, f0, f1, c.eps0, c.eps1)?;
    let sol = solve_contamination(&spec)?;
    Ok(Outcome {
        grid,
        nominal_lr: spec.nominal_ratio(),
        robust_lr: sol.robust_lrf,
        lfd0: sol.lfd0,
        lfd1: sol.lfd1,
        details: Details::Contamination {
            direction: match direction {
                Direction::Lower => "lower",
                Direction::Upper => "upper",
            },
            t_l: sol.t_l,
            t_u: sol.t_u,
            degenerate: sol.degenerate,
            residuals: sol.residuals,
        },
        sampler: Some(Box::new(ContaminationSampler(spec))),
    })
}

fn band_outcome(grid: Grid, spec: BandSpec, sol: BandSolution, nominal_lr: Vec<f64>) -> Outcome {
    let regions = sol
        .regions
        .iter()
        .map(|r| RegionSummary {
            rule: r.rule,
            points: r.indices().count(),
            intervals: r.x_intervals(&grid),
        })
        .collect();
    let overlap = band_overlap_diagnostic(&sol);
    Outcome {
        grid,
        details: Details::Band {
            band_type: sol.band_type,
            template: sol.template,
            k1: sol.k1,
            k2: sol.k2,
            interior_mass: sol.interior_mass,
            regions,
            overlap_measure: overlap,
        },
        robust_lr: sol.robust_lrf,
        nominal_lr,
        lfd0: sol.lfd0,
        lfd1: sol.lfd1,
        sampler: Some(Box::new(BandSampler(spec))),
    }
}

/// Builds the convex program of a moment, p-point or hybrid class.
pub fn convex_problem(grid: Grid, c: &ConstraintClass) -> Result<ConvexProblem, CliError> {
    let mut rows = Vec::with_capacity(c.constraints.len());
    for (k, con) in c.constraints.iter().enumerate() {
        let (lower, upper) = con.bounds();
        let (lo, hi) = (lower.unwrap_or(f64::NEG_INFINITY), upper.unwrap_or(f64::INFINITY));
        let row = match con {
            ConstraintConfig::Moment { hypothesis, power, .. } => {
                let p = *power as i32;
                LinearConstraint::moment(&grid, hyp(*hypothesis), |x| x.powi(p), lo, hi)
            }
            ConstraintConfig::Probability { hypothesis, from, to, .. } => {
                LinearConstraint::probability(&grid, hyp(*hypothesis), *from, *to, lo, hi)
            }
        };
        rows.push(row.map_err(|e| CliError::config(format!("class.constraints[{k}]"), e.to_string()))?);
    }
    Ok(ConvexProblem::new(grid, rows)?)
}

fn hyp(w: Which) -> Hypothesis {
    match w {
        Which::H0 => Hypothesis::H0,
        Which::H1 => Hypothesis::H1,
    }
}

pub fn solver_options(c: &ConstraintClass) -> SolverOptions {
    let mut opts = SolverOptions::default();
    if let Some(s) = &c.solver {
        if let Some(t) = s.gap_tol {
            opts.gap_tol = t;
        }
        if let Some(m) = s.max_newton {
            opts.max_newton = m;
        }
    }
    opts
}

fn solve_convex_class(grid: Grid, c: &ConstraintClass, base: &Path) -> Result<Outcome, CliError> {
    let problem = convex_problem(grid, c)?;
    let opts = solver_options(c);
    let u_grid = c.solver.as_ref().and_then(|s| s.u_grid.clone()).unwrap_or_else(default_u_grid);
    let res: ConvexLfdResult = minimize_over_u(&problem, &u_grid, &opts)?;
    let u_dependence = u_dependence_metric(&problem, &U_DEPENDENCE_PROBES, &opts)?;
    let robust_lr = ratio(res.lfd0.values(), res.lfd1.values());
    let nominal_lr = match (&c.nominal0, &c.nominal1) {
        (Some(a), Some(b)) => nominal_ratio(&grid, base, a, b)?,
        (None, None) => robust_lr.clone(),
        _ => return Err(CliError::config("class", "give both nominal0 and nominal1 or neither")),
    };
    Ok(Outcome {
        grid,
        robust_lr,
        nominal_lr,
        details: Details::Convex {
            u_star: res.u_star,
            objective: res.objective,
            kkt_residual: res.kkt_residual,
            max_violation: res.max_violation,
            active_constraints: res.active_constraints,
            u_dependence,
            profile: res.profile,
        },
        lfd0: res.lfd0,
        lfd1: res.lfd1,
        sampler: None,
    })
}
