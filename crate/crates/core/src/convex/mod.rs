//! Least favorable densities for convex classes given by linear constraints.
//!
//! Each hypothesis' class is the set of grid densities satisfying
//!
//! * linear rows `lower <= sum_i weights_i g_i <= upper` (moment and
//!   probability constraints, or any hybrid of them),
//! * an optional pointwise box `lo_i <= g_i <= hi_i` (band classes),
//! * an optional total-variation ball around a nominal density.
//!
//! For fixed `u` the u-affinity is maximized over the product of the two
//! classes with a log-barrier interior-point method (see `barrier`). The outer
//! problem minimizes the maximal affinity over `u` by a grid scan followed by
//! golden-section refinement.

mod barrier;

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LfdError, Result};
use crate::exec::Execution;
use crate::grid::{random_spline, Grid, GridDensity};

use barrier::{EqRow, GlobalRow, LocalRow, Program, Settings};

/// Which density a constraint applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    #[serde(rename = "hypothesis0")]
    H0,
    #[serde(rename = "hypothesis1")]
    H1,
}

impl Hypothesis {
    pub(crate) fn index(self) -> usize {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1 => 1,
        }
    }
}

/// `lower <= sum_i weights_i g_i <= upper` for the density of `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub target: Hypothesis,
}

impl LinearConstraint {
    pub fn new(weights: Vec<f64>, lower: f64, upper: f64, target: Hypothesis) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LfdError::InvalidParameter("constraint weights must be finite".into()));
        }
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(LfdError::InvalidParameter(format!(
                "constraint bounds must satisfy lower <= upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            weights,
            lower,
            upper,
            target,
        })
    }

    /// Generalized moment `E[h(Y)]` in `[lower, upper]`, with trapezoid weights.
    pub fn moment(
        grid: &Grid,
        target: Hypothesis,
        h: impl Fn(f64) -> f64,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        let w = (0..grid.len()).map(|i| grid.weight(i) * h(grid.point(i))).collect();
        Self::new(w, lower, upper, target)
    }

    /// Probability of the half-open interval `[a, b)` in `[lower, upper]`.
    pub fn probability(
        grid: &Grid,
        target: Hypothesis,
        a: f64,
        b: f64,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        if !(a < b) {
            return Err(LfdError::InvalidParameter(format!("empty interval [{a}, {b})")));
        }
        let tol = 1e-9 * grid.dx();
        let w = (0..grid.len())
            .map(|i| {
                let x = grid.point(i);
                if x >= a - tol && x < b - tol {
                    grid.weight(i)
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(w, lower, upper, target)
    }

    /// `sum_i weights_i g_i`.
    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, g)| w * g).sum()
    }

    /// Amount by which `values` violates the row (zero when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let v = self.evaluate(values);
        (self.lower - v).max(v - self.upper).max(0.0)
    }
}

/// Pointwise bounds `lower_i <= g_i <= upper_i`; `upper` may hold `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Total-variation ball of radius `radius` around `nominal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvBall {
    pub nominal: GridDensity,
    pub radius: f64,
}

/// The pair of classes of a robust testing problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProblem {
    grid: Grid,
    constraints: Vec<LinearConstraint>,
    boxes: [Option<DensityBox>; 2],
    balls: [Option<TvBall>; 2],
}

impl ConvexProblem {
    /// Classes described by linear rows only; `constraints` may mix targets.
    pub fn new(grid: Grid, constraints: Vec<LinearConstraint>) -> Result<Self> {
        for c in &constraints {
            grid.check_len(c.weights.len())?;
        }
        Ok(Self {
            grid,
            constraints,
            boxes: [None, None],
            balls: [None, None],
        })
    }

    pub fn with_box(mut self, target: Hypothesis, bounds: DensityBox) -> Result<Self> {
        self.grid.check_len(bounds.lower.len())?;
        self.grid.check_len(bounds.upper.len())?;
        if bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .any(|(l, u)| !(l.is_finite() && *l >= 0.0 && u >= l))
        {
            return Err(LfdError::InvalidParameter(
                "box bounds must satisfy 0 <= lower <= upper".into(),
            ));
        }
        self.boxes[target.index()] = Some(bounds);
        Ok(self)
    }

    pub fn with_tv_ball(mut self, target: Hypothesis, ball: TvBall) -> Result<Self> {
        if ball.nominal.grid() != &self.grid {
            return Err(LfdError::GridMismatch("TV ball nominal".into()));
        }
        if !(0.0..1.0).contains(&ball.radius) {
            return Err(LfdError::InvalidParameter(format!(
                "TV radius must lie in [0, 1), got {}",
                ball.radius
            )));
        }
        self.balls[target.index()] = Some(ball);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    /// Largest violation of any constraint of the problem by a candidate pair.
    pub fn max_violation(&self, g0: &[f64], g1: &[f64]) -> f64 {
        let g = [g0, g1];
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            worst = worst.max(c.violation(g[c.target.index()]));
        }
        for j in 0..2 {
            worst = worst.max((self.grid.integrate(g[j]).unwrap_or(f64::NAN) - 1.0).abs());
            for v in g[j] {
                worst = worst.max(-v);
            }
            if let Some(b) = &self.boxes[j] {
                for i in 0..g[j].len() {
                    worst = worst.max(b.lower[i] - g[j][i]).max(g[j][i] - b.upper[i]);
                }
            }
            if let Some(ball) = &self.balls[j] {
                let tv: f64 = 0.5
                    * (0..g[j].len())
                        .map(|i| self.grid.weight(i) * (g[j][i] - ball.nominal.values()[i]).abs())
                        .sum::<f64>();
                worst = worst.max(tv - ball.radius);
            }
        }
        worst
    }

    fn block_size(&self) -> (usize, [Option<usize>; 2]) {
        let mut b = 2;
        let mut aux = [None, None];
        for j in 0..2 {
            if self.balls[j].is_some() {
                aux[j] = Some(b);
                b += 1;
            }
        }
        (b, aux)
    }

    fn program(&self) -> Program {
        let n = self.grid.len();
        let (b, aux) = self.block_size();
        let weights = self.grid.weights();
        let mut fixed = vec![None; n * b];
        let mut local = Vec::new();
        for j in 0..2 {
            let (lo, hi) = match &self.boxes[j] {
                Some(bx) => (bx.lower.clone(), bx.upper.clone()),
                None => (vec![0.0; n], vec![f64::INFINITY; n]),
            };
            for i in 0..n {
                if lo[i] == hi[i] {
                    fixed[i * b + j] = Some(lo[i]);
                }
            }
            local.push(LocalRow {
                terms: vec![(j, 1.0)],
                rhs: lo,
            });
            if hi.iter().any(|v| v.is_finite()) {
                local.push(LocalRow {
                    terms: vec![(j, -1.0)],
                    rhs: hi.iter().map(|v| -v).collect(),
                });
            }
            if let (Some(ball), Some(a)) = (&self.balls[j], aux[j]) {
                let f = ball.nominal.values();
                local.push(LocalRow {
                    terms: vec![(a, 1.0), (j, -1.0)],
                    rhs: f.iter().map(|v| -v).collect(),
                });
                local.push(LocalRow {
                    terms: vec![(a, 1.0), (j, 1.0)],
                    rhs: f.to_vec(),
                });
            }
        }
        let mut global = Vec::new();
        let mut eq: Vec<EqRow> = (0..2)
            .map(|j| EqRow {
                coef: (0..n).map(|i| (i * b + j, weights[i])).collect(),
                rhs: 1.0,
            })
            .collect();
        for (id, c) in self.constraints.iter().enumerate() {
            let j = c.target.index();
            let coef: Vec<(usize, f64)> = c
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i * b + j, *w))
                .collect();
            if c.lower == c.upper {
                eq.push(EqRow { coef, rhs: c.lower });
            } else {
                global.push(GlobalRow {
                    coef,
                    lower: c.lower,
                    upper: c.upper,
                    id,
                });
            }
        }
        for j in 0..2 {
            if let (Some(ball), Some(a)) = (&self.balls[j], aux[j]) {
                global.push(GlobalRow {
                    coef: (0..n).map(|i| (i * b + a, weights[i])).collect(),
                    lower: f64::NEG_INFINITY,
                    upper: 2.0 * ball.radius,
                    id: self.constraints.len() + j,
                });
            }
        }
        Program {
            n,
            b,
            weights,
            fixed,
            local,
            global,
            eq,
            obj: (0, 1),
        }
    }

    fn start(&self, start: StartPoint) -> Vec<f64> {
        let n = self.grid.len();
        let (b, aux) = self.block_size();
        let mut z = vec![0.0; n * b];
        let seed = match start {
            StartPoint::Uniform => None,
            StartPoint::Perturbed(seed) => Some(seed),
        };
        let width = self.grid.x_max() - self.grid.x_min();
        for j in 0..2 {
            let (lo, hi) = match &self.boxes[j] {
                Some(bx) => (bx.lower.clone(), bx.upper.clone()),
                None => (vec![0.0; n], vec![f64::INFINITY; n]),
            };
            let shape = match seed {
                Some(s) => random_spline(&self.grid, 9, 0.2, s.wrapping_add(j as u64)),
                None => vec![1.0; n],
            };
            let mut rng = seed.map(|s| ChaCha8Rng::seed_from_u64(s ^ 0xA5A5 ^ j as u64));
            let lo_mass = self.grid.integrate(&lo).unwrap_or(0.0);
            let shape_mass = self.grid.integrate(&shape).unwrap_or(width);
            let level = (1.0 - lo_mass).max(0.05) / shape_mass;
            for i in 0..n {
                let theta = rng.as_mut().map_or(0.5, |r| r.random_range(0.15..0.85));
                z[i * b + j] = if hi[i].is_finite() {
                    lo[i] + theta * (hi[i] - lo[i])
                } else {
                    lo[i] + level * shape[i]
                };
            }
            if let (Some(ball), Some(a)) = (&self.balls[j], aux[j]) {
                for i in 0..n {
                    z[i * b + a] = (z[i * b + j] - ball.nominal.values()[i]).abs() + 1.0;
                }
            }
        }
        z
    }
}

/// Starting point of the interior-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    /// Box midpoints, or flat densities where no upper bound exists.
    Uniform,
    /// Seeded random interior point.
    Perturbed(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub start: StartPoint,
    pub execution: Execution,
    /// Target bound on the barrier duality gap.
    pub gap_tol: f64,
    pub max_newton: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            start: StartPoint::Uniform,
            execution: Execution::default(),
            gap_tol: 1e-8,
            max_newton: 400,
        }
    }
}

/// Maximizer of the u-affinity at one fixed `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub u: f64,
    pub lfd0: GridDensity,
    pub lfd1: GridDensity,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub active_constraints: Vec<usize>,
    pub newton_steps: usize,
}

/// Result of the outer minimization over `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexLfdResult {
    pub u_star: f64,
    pub lfd0: GridDensity,
    pub lfd1: GridDensity,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub active_constraints: Vec<usize>,
    /// `(u, maximal affinity)` for every evaluated `u`, sorted by `u`.
    pub profile: Vec<(f64, f64)>,
}

/// Maximizes `sum_i w_i g1_i^u g0_i^(1-u)` over the two classes.
pub fn maximize_affinity_at_u(
    problem: &ConvexProblem,
    u: f64,
    options: &SolverOptions,
) -> Result<InnerSolution> {
    if !(u > 0.0 && u < 1.0) {
        return Err(LfdError::InvalidParameter(format!("u must lie in (0, 1), got {u}")));
    }
    let program = problem.program();
    let settings = Settings {
        gap_tol: options.gap_tol,
        max_newton: options.max_newton,
    };
    let out = barrier::solve(&program, u, problem.start(options.start), &settings)?;
    if out.objective >= 1.0 - 1e-6 {
        return Err(LfdError::ClassOverlap(format!(
            "maximal affinity {} reaches one, the classes share a member",
            out.objective
        )));
    }
    let b = program.b;
    let n = program.n;
    let g0: Vec<f64> = (0..n).map(|i| out.z[i * b].max(0.0)).collect();
    let g1: Vec<f64> = (0..n).map(|i| out.z[i * b + 1].max(0.0)).collect();
    let max_violation = problem.max_violation(&g0, &g1);
    let grid = problem.grid;
    Ok(InnerSolution {
        u,
        lfd0: GridDensity::normalized(grid, g0)?,
        lfd1: GridDensity::normalized(grid, g1)?,
        objective: out.objective,
        kkt_residual: out.kkt_residual,
        max_violation,
        active_constraints: out.active,
        newton_steps: out.newton_steps,
    })
}

/// Default outer grid: 21 equispaced points in `(0, 1)`.
pub fn default_u_grid() -> Vec<f64> {
    (0..21).map(|k| 0.025 + 0.0475 * k as f64).collect()
}

/// Minimizes the maximal affinity over `u`: scans `u_grid`, then refines the
/// bracket around the best grid point by golden section to width `1e-4`.
pub fn minimize_over_u(
    problem: &ConvexProblem,
    u_grid: &[f64],
    options: &SolverOptions,
) -> Result<ConvexLfdResult> {
    if u_grid.len() < 3 || u_grid.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(LfdError::InvalidParameter(
            "u grid needs at least three points inside (0, 1)".into(),
        ));
    }
    let mut us = u_grid.to_vec();
    us.sort_by(f64::total_cmp);
    let solved: Vec<Result<InnerSolution>> = options
        .execution
        .map(us.len(), |k| maximize_affinity_at_u(problem, us[k], options));
    let scan: Vec<InnerSolution> = solved.into_iter().collect::<Result<_>>()?;
    let best = (0..scan.len())
        .min_by(|a, b| scan[*a].objective.total_cmp(&scan[*b].objective))
        .expect("nonempty grid");
    let lo = us[best.saturating_sub(1)];
    let hi = us[(best + 1).min(us.len() - 1)];

    let evaluated = Mutex::new(scan);
    let eval = |u: f64| -> Result<f64> {
        let s = maximize_affinity_at_u(problem, u, options)?;
        let v = s.objective;
        evaluated.lock().expect("no poisoning").push(s);
        Ok(v)
    };
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut bnd) = (lo, hi);
    let mut c = bnd - r * (bnd - a);
    let mut d = a + r * (bnd - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while bnd - a > 1e-4 {
        if fc <= fd {
            bnd = d;
            d = c;
            fd = fc;
            c = bnd - r * (bnd - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (bnd - a);
            fd = eval(d)?;
        }
    }
    let mut all = evaluated.into_inner().expect("no poisoning");
    all.sort_by(|x, y| x.u.total_cmp(&y.u));
    let profile = all.iter().map(|s| (s.u, s.objective)).collect();
    let star = all
        .into_iter()
        .min_by(|x, y| x.objective.total_cmp(&y.objective))
        .expect("nonempty");
    Ok(ConvexLfdResult {
        u_star: star.u,
        lfd0: star.lfd0,
        lfd1: star.lfd1,
        objective: star.objective,
        kkt_residual: star.kkt_residual,
        max_violation: star.max_violation,
        active_constraints: star.active_constraints,
        profile,
    })
}

/// Largest sup-norm distance between the inner solutions at any two values
/// of `u_list`.
pub fn u_dependence_metric(
    problem: &ConvexProblem,
    u_list: &[f64],
    options: &SolverOptions,
) -> Result<f64> {
    if u_list.len() < 2 {
        return Err(LfdError::InvalidParameter("need at least two values of u".into()));
    }
    let sols: Vec<InnerSolution> = options
        .execution
        .map(u_list.len(), |k| maximize_affinity_at_u(problem, u_list[k], options))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for a in 0..sols.len() {
        for b in a + 1..sols.len() {
            worst = worst
                .max(sup_distance(sols[a].lfd0.values(), sols[b].lfd0.values()))
                .max(sup_distance(sols[a].lfd1.values(), sols[b].lfd1.values()));
        }
    }
    Ok(worst)
}

/// `max_i |a_i - b_i|`.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
