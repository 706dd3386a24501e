//! Least favorable densities for total-variation neighbourhoods.
//!
//! Around each nominal density `f_j` the class holds every density within
//! total variation `eps_j`. The robust likelihood ratio is the nominal ratio
//! `l = f1 / f0` clipped to `[t_l, t_u]`, where the thresholds are the unique
//! roots of two decoupled piecewise-linear residuals:
//!
//! ```text
//! R_l(t) = sum_{l < t} w (t f0 - f1) - eps0 t - eps1
//! R_u(t) = sum_{l > t} w (f1 - t f0) - eps0 t - eps1
//! ```
//!
//! `R_l` is convex and increasing past its minimum on `[min l, 1]`, `R_u` is
//! strictly decreasing on `[1, max l]`.

use serde::{Deserialize, Serialize};

use crate::divergence::{ratio_values, tv_distance};
use crate::error::{LfdError, Result};
use crate::grid::GridDensity;
use crate::roots::newton_bracketed;

/// Total-variation uncertainty specification.
#[derive(Debug, Clone, PartialEq)]
pub struct TvSpec {
    f0: GridDensity,
    f1: GridDensity,
    eps0: f64,
    eps1: f64,
    ratio: Vec<f64>,
}

impl TvSpec {
    /// Validates radii in `[0, 1)` and that the balls are disjoint,
    /// i.e. `TV(f0, f1) > eps0 + eps1`.
    pub fn new(f0: GridDensity, f1: GridDensity, eps0: f64, eps1: f64) -> Result<Self> {
        f0.same_grid(&f1, "nominal densities")?;
        for (name, e) in [("eps0", eps0), ("eps1", eps1)] {
            if !(0.0..1.0).contains(&e) {
                return Err(LfdError::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {e}"
                )));
            }
        }
        let tv = tv_distance(&f0, &f1)?;
        if tv <= eps0 + eps1 {
            return Err(LfdError::ClassOverlap(format!(
                "TV(f0, f1) = {tv} does not exceed eps0 + eps1 = {}",
                eps0 + eps1
            )));
        }
        let ratio = ratio_values(f1.values(), f0.values());
        Ok(Self {
            f0,
            f1,
            eps0,
            eps1,
            ratio,
        })
    }

    pub fn f0(&self) -> &GridDensity {
        &self.f0
    }

    pub fn f1(&self) -> &GridDensity {
        &self.f1
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    /// Nominal likelihood ratio `f1 / f0` on the grid.
    pub fn nominal_ratio(&self) -> &[f64] {
        &self.ratio
    }

    /// Same specification with the hypotheses exchanged.
    pub fn swapped(&self) -> Result<Self> {
        Self::new(self.f1.clone(), self.f0.clone(), self.eps1, self.eps0)
    }

    fn lower_residual(&self, t: f64) -> (f64, f64) {
        let grid = self.f0.grid();
        let (f0, f1) = (self.f0.values(), self.f1.values());
        let mut r = 0.0;
        let mut dr = 0.0;
        for i in 0..f0.len() {
            if self.ratio[i] < t {
                let w = grid.weight(i);
                r += w * (t * f0[i] - f1[i]);
                dr += w * f0[i];
            }
        }
        (r - self.eps0 * t - self.eps1, dr - self.eps0)
    }

    fn upper_residual(&self, t: f64) -> (f64, f64) {
        let grid = self.f0.grid();
        let (f0, f1) = (self.f0.values(), self.f1.values());
        let mut r = 0.0;
        let mut dr = 0.0;
        for i in 0..f0.len() {
            if self.ratio[i] > t {
                let w = grid.weight(i);
                r += w * (f1[i] - t * f0[i]);
                dr -= w * f0[i];
            }
        }
        (r - self.eps0 * t - self.eps1, dr - self.eps0)
    }

    /// Ratio value at which the cumulative `f`-probability of `{l <= value}`
    /// first reaches `p`.
    fn ratio_quantile(&self, f: &GridDensity, p: f64) -> f64 {
        let mut idx: Vec<usize> = (0..self.ratio.len()).collect();
        idx.sort_by(|a, b| self.ratio[*a].total_cmp(&self.ratio[*b]));
        let grid = f.grid();
        let mut acc = 0.0;
        for i in &idx {
            acc += grid.weight(*i) * f.values()[*i];
            if acc >= p {
                return self.ratio[*i];
            }
        }
        self.ratio[*idx.last().expect("nonempty grid")]
    }
}

/// Residuals `(R_l(t_l), R_u(t_u))` of the threshold equations.
pub fn tv_residuals(spec: &TvSpec, t_l: f64, t_u: f64) -> Result<(f64, f64)> {
    if !(t_l > 0.0 && t_l.is_finite() && t_u > 0.0 && t_u.is_finite()) {
        return Err(LfdError::InvalidParameter(format!(
            "thresholds must be positive and finite, got ({t_l}, {t_u})"
        )));
    }
    Ok((spec.lower_residual(t_l).0, spec.upper_residual(t_u).0))
}

/// Solution of the total-variation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvSolution {
    pub t_l: f64,
    pub t_u: f64,
    pub beta: f64,
    pub sigma: f64,
    pub lfd0: GridDensity,
    pub lfd1: GridDensity,
    /// Robust likelihood ratio `clamp(l, t_l, t_u)` on the grid.
    pub robust_lrf: Vec<f64>,
    /// Both radii were zero; the nominal densities are returned unchanged.
    pub degenerate: bool,
    pub residuals: [f64; 2],
    pub iterations: [usize; 2],
}

/// Solves for the clipping thresholds and builds the least favorable pair.
pub fn solve_tv(spec: &TvSpec) -> Result<TvSolution> {
    let l = &spec.ratio;
    let l_min = l.iter().copied().fold(f64::INFINITY, f64::min);
    let l_max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    if spec.eps0 == 0.0 && spec.eps1 == 0.0 {
        return Ok(TvSolution {
            t_l: l_min,
            t_u: l_max,
            beta: 0.0,
            sigma: 0.0,
            lfd0: spec.f0.clone(),
            lfd1: spec.f1.clone(),
            robust_lrf: l.clone(),
            degenerate: true,
            residuals: [0.0, 0.0],
            iterations: [0, 0],
        });
    }

    let p = (2.0 * spec.eps1 + spec.eps0).clamp(1e-12, 1.0 - 1e-12);
    let guess_l = spec.ratio_quantile(&spec.f0, p).clamp(l_min, 1.0);
    let guess_u = spec.ratio_quantile(&spec.f1, 1.0 - p).clamp(1.0, l_max);

    let ftol = 1e-13;
    let (t_l, it_l) = newton_bracketed(
        |t| spec.lower_residual(t),
        guess_l,
        l_min,
        1.0,
        ftol,
        "total-variation lower threshold",
    )?;
    let (t_u, it_u) = newton_bracketed(
        |t| spec.upper_residual(t),
        guess_u,
        1.0,
        l_max,
        ftol,
        "total-variation upper threshold",
    )?;
    let residuals = [spec.lower_residual(t_l).0, spec.upper_residual(t_u).0];
    if residuals[0].abs() > 1e-10 || residuals[1].abs() > 1e-10 {
        return Err(LfdError::convergence(
            "total-variation thresholds",
            "residual above tolerance",
            vec![t_l, t_u, residuals[0], residuals[1]],
        ));
    }

    let grid = *spec.f0.grid();
    let (f0, f1) = (spec.f0.values(), spec.f1.values());
    let mut low_gap = 0.0;
    let mut high_gap = 0.0;
    for i in 0..f0.len() {
        let w = grid.weight(i);
        if l[i] < t_l {
            low_gap += w * (t_l * f0[i] - f1[i]);
        } else if l[i] > t_u {
            high_gap += w * (f1[i] - t_u * f0[i]);
        }
    }
    let coef = |gap: f64| -> Result<f64> {
        if spec.eps0 == 0.0 {
            Ok(0.0)
        } else if gap < 1e-12 {
            Err(LfdError::infeasible(
                "clipping region carries no mass, the threshold system has no solution",
            ))
        } else {
            Ok(spec.eps0 / gap)
        }
    };
    let beta = coef(low_gap)?;
    let sigma = coef(high_gap)?;

    let mut g0 = Vec::with_capacity(f0.len());
    let mut g1 = Vec::with_capacity(f0.len());
    let mut robust = Vec::with_capacity(f0.len());
    for i in 0..f0.len() {
        let (a, r) = if l[i] < t_l {
            (f0[i] + beta * (f1[i] - t_l * f0[i]), t_l)
        } else if l[i] > t_u {
            (f0[i] + sigma * (f1[i] - t_u * f0[i]), t_u)
        } else {
            (f0[i], l[i])
        };
        if a < -1e-14 {
            return Err(LfdError::infeasible(format!(
                "least favorable density is negative ({a}) at x = {}",
                grid.point(i)
            )));
        }
        let a = a.max(0.0);
        g0.push(a);
        g1.push(if l[i] < t_l || l[i] > t_u { r * a } else { f1[i] });
        robust.push(r);
    }

    let check = |v: Vec<f64>, nominal: &GridDensity, eps: f64, name: &str| -> Result<GridDensity> {
        let mass = grid.integrate(&v)?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(LfdError::convergence(
                "total-variation densities",
                format!("{name} has mass {mass}"),
                vec![t_l, t_u, mass],
            ));
        }
        let d = GridDensity::normalized(grid, v)?;
        let tv = tv_distance(&d, nominal)?;
        if (tv - eps).abs() > 1e-6 {
            return Err(LfdError::convergence(
                "total-variation densities",
                format!("{name} lies at distance {tv} instead of {eps}"),
                vec![t_l, t_u, tv],
            ));
        }
        Ok(d)
    };
    let lfd0 = check(g0, &spec.f0, spec.eps0, "lfd0")?;
    let lfd1 = check(g1, &spec.f1, spec.eps1, "lfd1")?;

    Ok(TvSolution {
        t_l,
        t_u,
        beta,
        sigma,
        lfd0,
        lfd1,
        robust_lrf: robust,
        degenerate: false,
        residuals,
        iterations: [it_l, it_u],
    })
}

/// Robust likelihood ratio at an arbitrary point: the linearly interpolated
/// nominal ratio clipped to `[t_l, t_u]`.
pub fn eval_clipped_lrf(solution: &TvSolution, spec: &TvSpec, x: f64) -> Result<f64> {
    let nominal = spec.f0.grid().interpolate(&spec.ratio, x)?;
    Ok(nominal.clamp(solution.t_l, solution.t_u))
}
