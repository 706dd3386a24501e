//! Least favorable densities for lower and upper contamination classes.
//!
//! The lower class around `f_j` is `{(1 - eps_j) f_j + eps_j h}`; the upper
//! class is `{(1 + eps_j) f_j - eps_j h}` with `h` any density keeping the
//! result nonnegative. Both are bands with a single active bound, so the
//! least favorable pair follows from two monotone mass equations in the
//! clipping thresholds, each solved by bisection in `log t`.

use serde::{Deserialize, Serialize};

use crate::divergence::ratio_values;
use crate::error::{LfdError, Result};
use crate::grid::{random_spline, Grid, GridDensity};
use crate::roots::log_bisect_increasing;

/// Which side of the nominal density is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    direction: Direction,
    f0: GridDensity,
    f1: GridDensity,
    eps0: f64,
    eps1: f64,
    bound0: Vec<f64>,
    bound1: Vec<f64>,
    ratio: Vec<f64>,
}

impl ContaminationSpec {
    /// Radii must lie in `[0, 1)` for the lower class and be nonnegative and
    /// finite for the upper class.
    pub fn new(
        direction: Direction,
        f0: GridDensity,
        f1: GridDensity,
        eps0: f64,
        eps1: f64,
    ) -> Result<Self> {
        f0.same_grid(&f1, "nominal densities")?;
        for (name, e) in [("eps0", eps0), ("eps1", eps1)] {
            let ok = match direction {
                Direction::Lower => (0.0..1.0).contains(&e),
                Direction::Upper => e >= 0.0 && e.is_finite(),
            };
            if !ok {
                return Err(LfdError::InvalidParameter(format!(
                    "{name} = {e} is outside the admissible range for {direction:?} contamination"
                )));
            }
        }
        let scale = |e: f64| match direction {
            Direction::Lower => 1.0 - e,
            Direction::Upper => 1.0 + e,
        };
        let bound0: Vec<f64> = f0.values().iter().map(|v| scale(eps0) * v).collect();
        let bound1: Vec<f64> = f1.values().iter().map(|v| scale(eps1) * v).collect();
        let ratio = ratio_values(&bound1, &bound0);
        Ok(Self {
            direction,
            f0,
            f1,
            eps0,
            eps1,
            bound0,
            bound1,
            ratio,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
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

    pub fn grid(&self) -> &Grid {
        self.f0.grid()
    }

    /// Ratio of the active bounds, `g1 / g0`.
    pub fn bound_ratio(&self) -> &[f64] {
        &self.ratio
    }

    /// Nominal ratio `f1 / f0`.
    pub fn nominal_ratio(&self) -> Vec<f64> {
        ratio_values(self.f1.values(), self.f0.values())
    }

    pub fn swapped(&self) -> Result<Self> {
        Self::new(
            self.direction,
            self.f1.clone(),
            self.f0.clone(),
            self.eps1,
            self.eps0,
        )
    }

    fn lfd0_at(&self, i: usize, t_l: f64, t_u: f64) -> f64 {
        match self.direction {
            Direction::Lower => {
                if self.ratio[i] <= t_u {
                    self.bound0[i]
                } else {
                    self.bound1[i] / t_u
                }
            }
            Direction::Upper => {
                if self.ratio[i] >= t_l {
                    self.bound0[i]
                } else {
                    self.bound1[i] / t_l
                }
            }
        }
    }

    fn lfd1_at(&self, i: usize, t_l: f64, t_u: f64) -> f64 {
        match self.direction {
            Direction::Lower => {
                if self.ratio[i] >= t_l {
                    self.bound1[i]
                } else {
                    t_l * self.bound0[i]
                }
            }
            Direction::Upper => {
                if self.ratio[i] <= t_u {
                    self.bound1[i]
                } else {
                    t_u * self.bound0[i]
                }
            }
        }
    }

    fn mass0(&self, t_l: f64, t_u: f64) -> f64 {
        let g = self.grid();
        (0..g.len()).map(|i| g.weight(i) * self.lfd0_at(i, t_l, t_u)).sum()
    }

    fn mass1(&self, t_l: f64, t_u: f64) -> f64 {
        let g = self.grid();
        (0..g.len()).map(|i| g.weight(i) * self.lfd1_at(i, t_l, t_u)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSolution {
    pub direction: Direction,
    pub t_l: f64,
    pub t_u: f64,
    pub lfd0: GridDensity,
    pub lfd1: GridDensity,
    /// Robust likelihood ratio: the bound ratio clipped to `[t_l, t_u]`.
    pub robust_lrf: Vec<f64>,
    pub degenerate: bool,
    /// Mass residuals `(mass(lfd0) - 1, mass(lfd1) - 1)` before storage.
    pub residuals: [f64; 2],
}

/// Solves the lower or upper contamination problem described by `spec`.
pub fn solve_contamination(spec: &ContaminationSpec) -> Result<ContaminationSolution> {
    let l = &spec.ratio;
    let positive: Vec<f64> = l.iter().copied().filter(|v| *v > 0.0 && v.is_finite()).collect();
    if positive.is_empty() {
        return Err(LfdError::DegenerateDensity(
            "bound ratio vanishes on the whole grid".into(),
        ));
    }
    let l_min = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let l_max = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ftol = 1e-13;
    let method = "contamination threshold";

    let (t_l, t_u) = match spec.direction {
        Direction::Lower => {
            let t_u = if spec.eps0 == 0.0 {
                l_max
            } else {
                // mass0 decreases in t_u
                log_bisect_increasing(|t| 1.0 - spec.mass0(0.0, t), l_min, l_max, ftol, method)?
            };
            let t_l = if spec.eps1 == 0.0 {
                l_min
            } else {
                // mass1 increases in t_l
                log_bisect_increasing(|t| spec.mass1(t, 0.0) - 1.0, l_min, l_max, ftol, method)?
            };
            (t_l, t_u)
        }
        Direction::Upper => {
            let t_l = if spec.eps0 == 0.0 {
                l_min
            } else {
                log_bisect_increasing(|t| 1.0 - spec.mass0(t, 0.0), l_min, l_max, ftol, method)?
            };
            let t_u = if spec.eps1 == 0.0 {
                l_max
            } else {
                log_bisect_increasing(|t| spec.mass1(0.0, t) - 1.0, l_min, l_max, ftol, method)?
            };
            (t_l, t_u)
        }
    };

    if t_l >= t_u {
        return Err(LfdError::ClassOverlap(format!(
            "clipping thresholds cross (t_l = {t_l}, t_u = {t_u})"
        )));
    }

    let grid = *spec.grid();
    let g0: Vec<f64> = (0..grid.len()).map(|i| spec.lfd0_at(i, t_l, t_u)).collect();
    let g1: Vec<f64> = (0..grid.len()).map(|i| spec.lfd1_at(i, t_l, t_u)).collect();
    let residuals = [grid.integrate(&g0)? - 1.0, grid.integrate(&g1)? - 1.0];
    if residuals[0].abs() > 1e-8 || residuals[1].abs() > 1e-8 {
        return Err(LfdError::convergence(
            method,
            "mass equations not satisfied",
            vec![t_l, t_u, residuals[0], residuals[1]],
        ));
    }
    let robust_lrf = l.iter().map(|v| v.clamp(t_l, t_u)).collect();
    Ok(ContaminationSolution {
        direction: spec.direction,
        t_l,
        t_u,
        lfd0: GridDensity::new(grid, g0)?,
        lfd1: GridDensity::new(grid, g1)?,
        robust_lrf,
        degenerate: spec.eps0 == 0.0 && spec.eps1 == 0.0,
        residuals,
    })
}

/// Lower contamination: fails unless `spec` has [`Direction::Lower`].
pub fn solve_lower_contamination(spec: &ContaminationSpec) -> Result<ContaminationSolution> {
    expect_direction(spec, Direction::Lower)?;
    solve_contamination(spec)
}

/// Upper contamination: fails unless `spec` has [`Direction::Upper`] with
/// positive radii.
pub fn solve_upper_contamination(spec: &ContaminationSpec) -> Result<ContaminationSolution> {
    expect_direction(spec, Direction::Upper)?;
    if spec.eps0 <= 0.0 || spec.eps1 <= 0.0 {
        return Err(LfdError::InvalidParameter(
            "upper contamination needs positive radii".into(),
        ));
    }
    solve_contamination(spec)
}

fn expect_direction(spec: &ContaminationSpec, d: Direction) -> Result<()> {
    if spec.direction != d {
        return Err(LfdError::InvalidParameter(format!(
            "expected {d:?} contamination, got {:?}",
            spec.direction
        )));
    }
    Ok(())
}

/// Probabilities of the event `{robust_lrf < t}` under a true pair and under
/// the least favorable pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingWitness {
    pub g0_true: f64,
    pub g0_lfd: f64,
    pub g1_true: f64,
    pub g1_lfd: f64,
}

impl OrderingWitness {
    /// `G0(A) >= G0_hat(A)` and `G1(A) <= G1_hat(A)` up to `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.g0_true >= self.g0_lfd - tol && self.g1_true <= self.g1_lfd + tol
    }
}

/// Contaminates both nominals with `h` and compares the probability of
/// `{robust_lrf < t}` against the least favorable pair.
pub fn smr_ordering_witness(
    solution: &ContaminationSolution,
    spec: &ContaminationSpec,
    t: f64,
    h: &GridDensity,
) -> Result<OrderingWitness> {
    h.same_grid(&spec.f0, "contaminating density")?;
    let member = |f: &GridDensity, eps: f64| -> Result<GridDensity> {
        let v: Vec<f64> = f
            .values()
            .iter()
            .zip(h.values())
            .map(|(fv, hv)| match spec.direction {
                Direction::Lower => (1.0 - eps) * fv + eps * hv,
                Direction::Upper => (1.0 + eps) * fv - eps * hv,
            })
            .collect();
        if v.iter().any(|x| *x < -1e-15) {
            return Err(LfdError::InvalidParameter(
                "contaminating density is not admissible for the upper class".into(),
            ));
        }
        GridDensity::new(*f.grid(), v.into_iter().map(|x| x.max(0.0)).collect())
    };
    let g0 = member(&spec.f0, spec.eps0)?;
    let g1 = member(&spec.f1, spec.eps1)?;
    let event = |i: usize| solution.robust_lrf[i] < t;
    Ok(OrderingWitness {
        g0_true: g0.probability_where(event),
        g0_lfd: solution.lfd0.probability_where(event),
        g1_true: g1.probability_where(event),
        g1_lfd: solution.lfd1.probability_where(event),
    })
}

/// Random contaminating density that is admissible for both hypotheses of
/// `spec`. For the upper class it stays below
/// `min_j (1 + eps_j) f_j / eps_j`.
pub fn random_contamination(spec: &ContaminationSpec, seed: u64) -> Result<GridDensity> {
    let grid = *spec.grid();
    match spec.direction {
        Direction::Lower => {
            let s = random_spline(&grid, 12, 0.0, seed);
            let v = s
                .iter()
                .enumerate()
                .map(|(i, s)| s * (spec.f0.values()[i] + spec.f1.values()[i] + 1e-3))
                .collect();
            GridDensity::normalized(grid, v)
        }
        Direction::Upper => {
            let envelope: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let a = admissible_cap(spec.f0.values()[i], spec.eps0);
                    let b = admissible_cap(spec.f1.values()[i], spec.eps1);
                    a.min(b)
                })
                .collect();
            let full = grid.integrate(&envelope)?;
            if !(full >= 1.0) {
                return Err(LfdError::InvalidParameter(
                    "upper classes are too narrow to draw a common contaminating density".into(),
                ));
            }
            let mut s = random_spline(&grid, 12, 0.0, seed);
            let shaped_mass = |s: &[f64]| -> f64 {
                (0..grid.len()).map(|i| grid.weight(i) * envelope[i] * s[i]).sum()
            };
            let mass = shaped_mass(&s);
            if mass < 1.0 {
                // blend the shape toward the full envelope until it carries unit mass
                let theta = (1.0 - mass) / (full - mass);
                s.iter_mut().for_each(|v| *v += theta * (1.0 - *v));
            }
            let shaped: Vec<f64> = envelope.iter().zip(&s).map(|(e, s)| e * s).collect();
            GridDensity::normalized(grid, shaped)
        }
    }
}

fn admissible_cap(f: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        f64::INFINITY
    } else {
        (1.0 + eps) * f / eps
    }
}
