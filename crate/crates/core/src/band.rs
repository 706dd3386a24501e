//! General band model: each density is squeezed between a lower and an upper
//! bounding function, `gj_lower <= gj <= gj_upper`.
//!
//! The robust likelihood ratio takes one of three shapes. Types A and C carry
//! two constants `k1`, `k2`. Under those templates the unit-mass equations
//! decouple, so each constant comes from a scalar bisection. A template is
//! accepted only when its constants come out in the order the template
//! presumes (`k2 < k1` for A, `k1 < k2` for C).
//!
//! Type B has a single constant ratio on an interior region. There the
//! densities are not unique: any pair with `g1 = k g0` and the right mass
//! attains the same affinity. The constant solves a monotone scalar equation,
//! and the interior shape is taken from the barrier solver.

use serde::{Deserialize, Serialize};

use crate::convex::{maximize_affinity_at_u, ConvexProblem, DensityBox, Hypothesis, SolverOptions};
use crate::error::{LfdError, Result};
use crate::grid::{random_spline, Grid, GridDensity, DENSITY_FLOOR};
use crate::roots::log_bisect_increasing;

/// Extreme regions lighter than this under both LFDs count as vanished.
pub const CLIPPED_LIMIT_MASS: f64 = 5e-3;

/// Tolerance used when checking the bound sandwich `int lower <= 1 <= int upper`.
const MASS_SLACK: f64 = 1e-12;

/// Bounding functions of the two classes on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    grid: Grid,
    g0_lower: Vec<f64>,
    g0_upper: Vec<f64>,
    g1_lower: Vec<f64>,
    g1_upper: Vec<f64>,
}

impl BandSpec {
    pub fn new(
        grid: Grid,
        g0_lower: Vec<f64>,
        g0_upper: Vec<f64>,
        g1_lower: Vec<f64>,
        g1_upper: Vec<f64>,
    ) -> Result<Self> {
        for v in [&g0_lower, &g0_upper, &g1_lower, &g1_upper] {
            grid.check_len(v.len())?;
        }
        for (j, lo, hi) in [(0, &g0_lower, &g0_upper), (1, &g1_lower, &g1_upper)] {
            if let Some(i) = (0..lo.len())
                .find(|&i| !(lo[i].is_finite() && hi[i].is_finite() && lo[i] >= 0.0 && lo[i] <= hi[i]))
            {
                return Err(LfdError::InvalidParameter(format!(
                    "bounds of hypothesis {j} violate 0 <= lower <= upper at index {i}"
                )));
            }
            let (ml, mu) = (grid.integrate(lo)?, grid.integrate(hi)?);
            if ml > 1.0 + MASS_SLACK || mu < 1.0 - MASS_SLACK {
                return Err(LfdError::InvalidParameter(format!(
                    "bounds of hypothesis {j} have masses {ml} and {mu}, which do not enclose one"
                )));
            }
        }
        Ok(Self {
            grid,
            g0_lower,
            g0_upper,
            g1_lower,
            g1_upper,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn g0_lower(&self) -> &[f64] {
        &self.g0_lower
    }

    pub fn g0_upper(&self) -> &[f64] {
        &self.g0_upper
    }

    pub fn g1_lower(&self) -> &[f64] {
        &self.g1_lower
    }

    pub fn g1_upper(&self) -> &[f64] {
        &self.g1_upper
    }

    fn bounds(&self, h: Hypothesis) -> (&[f64], &[f64]) {
        match h {
            Hypothesis::H0 => (&self.g0_lower, &self.g0_upper),
            Hypothesis::H1 => (&self.g1_lower, &self.g1_upper),
        }
    }

    /// The same classes as a box-constrained convex program.
    pub fn to_convex_problem(&self) -> Result<ConvexProblem> {
        ConvexProblem::new(self.grid, Vec::new())?
            .with_box(
                Hypothesis::H0,
                DensityBox {
                    lower: self.g0_lower.clone(),
                    upper: self.g0_upper.clone(),
                },
            )?
            .with_box(
                Hypothesis::H1,
                DensityBox {
                    lower: self.g1_lower.clone(),
                    upper: self.g1_upper.clone(),
                },
            )
    }

    fn ratio(&self, rule: Rule, i: usize, k1: f64, k2: f64) -> f64 {
        let r = |a: f64, b: f64| a / b.max(DENSITY_FLOOR);
        match rule {
            Rule::UpperOverLower => r(self.g1_upper[i], self.g0_lower[i]),
            Rule::UpperOverUpper => r(self.g1_upper[i], self.g0_upper[i]),
            Rule::LowerOverUpper => r(self.g1_lower[i], self.g0_upper[i]),
            Rule::LowerOverLower => r(self.g1_lower[i], self.g0_lower[i]),
            Rule::ConstK1 | Rule::InteriorNumeric => k1,
            Rule::ConstK2 => k2,
        }
    }

    /// Index into the template's rule list for grid point `i`.
    fn label(&self, template: BandType, i: usize, k1: f64, k2: f64) -> usize {
        let r = |rule| self.ratio(rule, i, k1, k2);
        let (ul, lu) = (r(Rule::UpperOverLower), r(Rule::LowerOverUpper));
        match template {
            BandType::A => {
                let uu = r(Rule::UpperOverUpper);
                if ul <= k2 {
                    0
                } else if uu < k2 {
                    1
                } else if uu <= k1 {
                    2
                } else if lu < k1 {
                    3
                } else {
                    4
                }
            }
            BandType::C => {
                let ll = r(Rule::LowerOverLower);
                if ul <= k1 {
                    0
                } else if ll < k1 {
                    1
                } else if ll <= k2 {
                    2
                } else if lu < k2 {
                    3
                } else {
                    4
                }
            }
            BandType::B | BandType::ClippedLimit => {
                if ul <= k1 {
                    0
                } else if lu < k1 {
                    1
                } else {
                    2
                }
            }
        }
    }
}

/// `scale` times a Gaussian density renormalized on `grid`, so that the
/// trapezoidal mass is exactly `scale`.
pub fn scaled_gaussian(grid: &Grid, scale: f64, mean: f64, variance: f64) -> Result<Vec<f64>> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(LfdError::InvalidParameter(format!("scale must be nonnegative, got {scale}")));
    }
    Ok(GridDensity::gaussian(*grid, mean, variance)?
        .into_values()
        .into_iter()
        .map(|v| scale * v)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandType {
    A,
    B,
    C,
    /// A Type A or C solution whose outermost regions carry almost no mass,
    /// so the ratio is a clipped version of a single bound ratio.
    #[serde(rename = "clipped_limit")]
    ClippedLimit,
}

impl BandType {
    /// Rules of the template, ordered along increasing likelihood ratio.
    pub fn rules(self) -> &'static [Rule] {
        use Rule::*;
        match self {
            BandType::A => &[UpperOverLower, ConstK2, UpperOverUpper, ConstK1, LowerOverUpper],
            BandType::C => &[UpperOverLower, ConstK1, LowerOverLower, ConstK2, LowerOverUpper],
            BandType::B | BandType::ClippedLimit => &[UpperOverLower, InteriorNumeric, LowerOverUpper],
        }
    }
}

/// How `lfd1 / lfd0` is formed on a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `g1_upper / g0_lower`
    UpperOverLower,
    ConstK2,
    /// `g1_upper / g0_upper`
    UpperOverUpper,
    ConstK1,
    /// `g1_lower / g0_upper`
    LowerOverUpper,
    /// `g1_lower / g0_lower`
    LowerOverLower,
    /// Constant ratio `k1` with densities found numerically.
    InteriorNumeric,
}

/// Grid points governed by one rule, as inclusive index intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub rule: Rule,
    pub intervals: Vec<(usize, usize)>,
}

impl Region {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.intervals.iter().flat_map(|&(a, b)| a..=b)
    }

    /// Intervals in coordinates, `[x_a, x_b]` for each index interval.
    pub fn x_intervals(&self, grid: &Grid) -> Vec<(f64, f64)> {
        self.intervals
            .iter()
            .map(|&(a, b)| (grid.point(a), grid.point(b)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSolution {
    pub band_type: BandType,
    /// The template that produced the solution; differs from `band_type`
    /// only for [`BandType::ClippedLimit`].
    pub template: BandType,
    pub k1: f64,
    /// Equal to `k1` for Type B.
    pub k2: f64,
    pub lfd0: GridDensity,
    pub lfd1: GridDensity,
    /// Regions in template order; a region may be empty.
    pub regions: Vec<Region>,
    /// Rule value at every grid point.
    pub robust_lrf: Vec<f64>,
    /// Type B only: mass of `lfd0` on the interior region.
    pub interior_mass: Option<f64>,
}

/// Solves the band model, trying Type A, then Type C, then Type B.
pub fn solve_band(spec: &BandSpec) -> Result<BandSolution> {
    for template in [BandType::A, BandType::C] {
        if let Ok(sol) = solve_template(spec, template) {
            return Ok(sol);
        }
    }
    solve_template(spec, BandType::B)
}

/// Solves under one fixed template and fails if the template is inconsistent.
pub fn solve_template(spec: &BandSpec, template: BandType) -> Result<BandSolution> {
    match template {
        BandType::A | BandType::C => solve_two_constant(spec, template),
        BandType::B => solve_type_b(spec, &SolverOptions::default()),
        BandType::ClippedLimit => Err(LfdError::InvalidParameter(
            "clipped_limit is an outcome, not a template".into(),
        )),
    }
}

/// `clamp(num / k, lo, hi)` for `H0` and `clamp(k * base, lo, hi)` for `H1`.
fn clamp_density(x: impl Fn(usize) -> f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..lo.len()).map(|i| x(i).clamp(lo[i], hi[i])).collect()
}

fn solve_two_constant(spec: &BandSpec, template: BandType) -> Result<BandSolution> {
    let grid = spec.grid;
    let (l0, u0) = spec.bounds(Hypothesis::H0);
    let (l1, u1) = spec.bounds(Hypothesis::H1);
    // Type A scales g1_upper and g0_upper; Type C scales g1_lower and g0_lower.
    let (num0, base1) = match template {
        BandType::A => (u1, u0),
        _ => (l1, l0),
    };
    let lfd0_at = |k2: f64| clamp_density(|i| num0[i] / k2, l0, u0);
    let lfd1_at = |k1: f64| clamp_density(|i| k1 * base1[i], l1, u1);
    let mass = |v: &[f64]| grid.integrate(v).expect("grid length");
    let method = "band template constant";
    let ftol = 1e-14;
    let k2 = log_bisect_increasing(|k| 1.0 - mass(&lfd0_at(k)), 1.0, 1.0, ftol, method)?;
    let k1 = log_bisect_increasing(|k| mass(&lfd1_at(k)) - 1.0, 1.0, 1.0, ftol, method)?;
    let ordered = match template {
        BandType::A => k2 < k1,
        _ => k1 < k2,
    };
    if !ordered {
        return Err(LfdError::infeasible(format!(
            "Type {template:?} constants are out of order (k1 = {k1}, k2 = {k2})"
        )));
    }
    let g0 = lfd0_at(k2);
    let g1 = lfd1_at(k1);
    let regions = regions_from_labels(spec, template, k1, k2);
    let robust_lrf = lrf_from_regions(spec, &regions, k1, k2);
    let lfd0 = GridDensity::new(grid, g0)?;
    let lfd1 = GridDensity::new(grid, g1)?;
    check_not_identical(&robust_lrf)?;

    let extreme_mass = |r: &Region| {
        let mut inside = vec![false; grid.len()];
        r.indices().for_each(|i| inside[i] = true);
        lfd0.probability_where(|i| inside[i])
            .max(lfd1.probability_where(|i| inside[i]))
    };
    let clipped = extreme_mass(&regions[0]) < CLIPPED_LIMIT_MASS
        && extreme_mass(&regions[regions.len() - 1]) < CLIPPED_LIMIT_MASS;
    Ok(BandSolution {
        band_type: if clipped { BandType::ClippedLimit } else { template },
        template,
        k1,
        k2,
        lfd0,
        lfd1,
        regions,
        robust_lrf,
        interior_mass: None,
    })
}

/// Type B: outer regions pinned to the bounds, `g1 = k g0` in between.
fn solve_type_b(spec: &BandSpec, options: &SolverOptions) -> Result<BandSolution> {
    let grid = spec.grid;
    let n = grid.len();
    let w = grid.weights();
    let (l0, u0) = spec.bounds(Hypothesis::H0);
    let (l1, u1) = spec.bounds(Hypothesis::H1);

    // Outer masses of lfd0 and lfd1 for a trial constant k.
    let outer = |k: f64| {
        let (mut p0, mut p1) = (0.0, 0.0);
        for i in 0..n {
            match spec.label(BandType::B, i, k, k) {
                0 => {
                    p0 += w[i] * l0[i];
                    p1 += w[i] * u1[i];
                }
                2 => {
                    p0 += w[i] * u0[i];
                    p1 += w[i] * l1[i];
                }
                _ => {}
            }
        }
        (p0, p1)
    };
    // k (1 - P0) - (1 - P1) is continuous and increasing in k: it is
    // piecewise linear with slope equal to the interior mass, and a point
    // switching region changes it by w_i g0_i (k - ratio_i) = 0.
    let phi = |k: f64| {
        let (p0, p1) = outer(k);
        k * (1.0 - p0) - (1.0 - p1)
    };
    let k = log_bisect_increasing(phi, 1.0, 1.0, 1e-15, "band interior constant")?;

    let labels: Vec<usize> = (0..n).map(|i| spec.label(BandType::B, i, k, k)).collect();
    let interior: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let (p0, _) = outer(k);
    let target = 1.0 - p0;
    // admissible lfd0 on the interior keeps both densities inside their bands
    let lo: Vec<f64> = interior.iter().map(|&i| l0[i].max(l1[i] / k)).collect();
    let hi: Vec<f64> = interior.iter().map(|&i| u0[i].min(u1[i] / k)).collect();
    let lo_mass: f64 = interior.iter().zip(&lo).map(|(&i, v)| w[i] * v).sum();
    let hi_mass: f64 = interior.iter().zip(&hi).map(|(&i, v)| w[i] * v).sum();
    let slack = 1e-12 * (1.0 + target.abs());
    if target < lo_mass - slack || target > hi_mass + slack {
        return Err(LfdError::infeasible(format!(
            "no Type B solution: interior mass {target} outside [{lo_mass}, {hi_mass}] at k = {k}"
        )));
    }

    let regions = regions_from_labels(spec, BandType::B, k, k);
    let robust_lrf = lrf_from_regions(spec, &regions, k, k);
    check_not_identical(&robust_lrf)?;

    // Interior shape: the barrier solution, clamped to the admissible strip
    // and moved toward one of its edges until the mass is right.
    let shape = maximize_affinity_at_u(&spec.to_convex_problem()?, 0.5, options)?;
    let mut v: Vec<f64> = interior
        .iter()
        .enumerate()
        .map(|(j, &i)| shape.lfd0.values()[i].clamp(lo[j], hi[j]))
        .collect();
    let current: f64 = interior.iter().zip(&v).map(|(&i, x)| w[i] * x).sum();
    if current < target {
        let theta = ((target - current) / (hi_mass - current)).min(1.0);
        v.iter_mut().zip(&hi).for_each(|(x, h)| *x += theta * (h - *x));
    } else if current > target {
        let theta = ((current - target) / (current - lo_mass)).min(1.0);
        v.iter_mut().zip(&lo).for_each(|(x, l)| *x -= theta * (*x - l));
    }

    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    for i in 0..n {
        match labels[i] {
            0 => {
                g0[i] = l0[i];
                g1[i] = u1[i];
            }
            2 => {
                g0[i] = u0[i];
                g1[i] = l1[i];
            }
            _ => {}
        }
    }
    for (j, &i) in interior.iter().enumerate() {
        g0[i] = v[j];
        g1[i] = k * v[j];
    }
    Ok(BandSolution {
        band_type: BandType::B,
        template: BandType::B,
        k1: k,
        k2: k,
        lfd0: GridDensity::new(grid, g0)?,
        lfd1: GridDensity::new(grid, g1)?,
        regions,
        robust_lrf,
        interior_mass: Some(target),
    })
}

fn check_not_identical(lrf: &[f64]) -> Result<()> {
    if lrf.iter().all(|r| (r - 1.0).abs() < 1e-9) {
        return Err(LfdError::ClassOverlap(
            "the robust likelihood ratio is identically one".into(),
        ));
    }
    Ok(())
}

fn regions_from_labels(spec: &BandSpec, template: BandType, k1: f64, k2: f64) -> Vec<Region> {
    let rules = template.rules();
    let mut regions: Vec<Region> = rules
        .iter()
        .map(|&rule| Region {
            rule,
            intervals: Vec::new(),
        })
        .collect();
    let n = spec.grid.len();
    let mut start = 0;
    while start < n {
        let label = spec.label(template, start, k1, k2);
        let mut end = start;
        while end + 1 < n && spec.label(template, end + 1, k1, k2) == label {
            end += 1;
        }
        regions[label].intervals.push((start, end));
        start = end + 1;
    }
    regions
}

fn lrf_from_regions(spec: &BandSpec, regions: &[Region], k1: f64, k2: f64) -> Vec<f64> {
    let mut lrf = vec![0.0; spec.grid.len()];
    for r in regions {
        for i in r.indices() {
            lrf[i] = spec.ratio(r.rule, i, k1, k2);
        }
    }
    lrf
}

/// Assigns every grid point to a region of the template implied by the
/// constants: Type A when `k2 < k1`, Type C when `k1 < k2`, Type B when they
/// coincide.
pub fn classify_regions(spec: &BandSpec, k1: f64, k2: f64) -> Vec<Region> {
    let template = if (k1 - k2).abs() <= 1e-12 * k1.max(k2) {
        BandType::B
    } else if k2 < k1 {
        BandType::A
    } else {
        BandType::C
    };
    regions_from_labels(spec, template, k1, k2)
}

/// Length of the set where the robust likelihood ratio equals one.
pub fn band_overlap_diagnostic(sol: &BandSolution) -> f64 {
    overlap_measure(&sol.lfd0, &sol.lfd1).expect("solution densities share a grid")
}

/// Total length of the grid cells on whose both endpoints
/// `|g1 / g0 - 1| < 1e-6`.
pub fn overlap_measure(g0: &GridDensity, g1: &GridDensity) -> Result<f64> {
    g0.same_grid(g1, "overlap densities")?;
    let flat: Vec<bool> = g0
        .values()
        .iter()
        .zip(g1.values())
        .map(|(a, b)| (b / a.max(DENSITY_FLOOR) - 1.0).abs() < 1e-6)
        .collect();
    let cells = flat.windows(2).filter(|w| w[0] && w[1]).count();
    Ok(cells as f64 * g0.grid().dx())
}

/// Random unit-mass density inside the band of hypothesis `h`.
///
/// A seeded spline picks a position between the bounds at every point; the
/// result is then blended toward the upper or lower bound to reach unit mass.
pub fn random_member(spec: &BandSpec, h: Hypothesis, seed: u64) -> Result<GridDensity> {
    let grid = spec.grid;
    let (lo, hi) = spec.bounds(h);
    let theta = random_spline(&grid, 9, 0.0, seed);
    let mut g: Vec<f64> = (0..lo.len()).map(|i| lo[i] + theta[i] * (hi[i] - lo[i])).collect();
    let m = grid.integrate(&g)?;
    let (ml, mu) = (grid.integrate(lo)?, grid.integrate(hi)?);
    if m < 1.0 {
        let a = (1.0 - m) / (mu - m);
        g.iter_mut().zip(hi).for_each(|(x, u)| *x += a * (u - *x));
    } else if m > 1.0 {
        let a = (m - 1.0) / (m - ml);
        g.iter_mut().zip(lo).for_each(|(x, l)| *x -= a * (*x - l));
    }
    GridDensity::normalized(grid, g)
}

/// Sup-distance between the robust likelihood ratio of `sol` and `other`
/// over the inner regions. For five-region templates the two outermost
/// regions are skipped; in the clipped limit they carry almost no mass.
pub fn inner_lrf_distance(sol: &BandSolution, other: &[f64]) -> f64 {
    let skip = if sol.regions.len() == 5 { 1 } else { 0 };
    sol.regions[skip..sol.regions.len() - skip]
        .iter()
        .flat_map(|r| r.indices())
        .map(|i| (sol.robust_lrf[i] - other[i]).abs())
        .fold(0.0, f64::max)
}
