//! Log-barrier interior-point engine for the density programs.
//!
//! Variables are stored point-major: each grid point owns a small block of
//! `b` variables (the two densities plus optional auxiliary variables). Local
//! constraints couple variables of one block only, so the Hessian of the
//! barrier is block diagonal plus a low-rank part coming from the global
//! inequality rows. Each Newton step eliminates the blocks and solves a small
//! dense system in the global multipliers and the equality multipliers.
//!
//! A feasibility phase minimizes a scalar relaxation `s` of the global
//! inequality rows; local constraints are kept strictly satisfied throughout
//! and equalities are reached by infeasible-start Newton steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{LfdError, Result};
use crate::grid::DENSITY_FLOOR;

/// `sum_k coef_k * v[var_k] >= rhs[i]` at every grid point `i` with a finite
/// right-hand side.
#[derive(Debug, Clone)]
pub(crate) struct LocalRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: Vec<f64>,
}

/// `lower <= sum coef * z <= upper` over the flat variable vector.
#[derive(Debug, Clone)]
pub(crate) struct GlobalRow {
    pub coef: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
    pub id: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EqRow {
    pub coef: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub n: usize,
    pub b: usize,
    pub weights: Vec<f64>,
    pub fixed: Vec<Option<f64>>,
    pub local: Vec<LocalRow>,
    pub global: Vec<GlobalRow>,
    pub eq: Vec<EqRow>,
    /// Block positions of `g0` and `g1`.
    pub obj: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub z: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub active: Vec<usize>,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub gap_tol: f64,
    pub max_newton: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Feasibility,
    Optimality,
}

/// One side of a global row: `sign * (a . z) - sign * bound (+ s) > 0`.
#[derive(Debug, Clone)]
struct Term {
    coef: Vec<(usize, f64)>,
    offset: f64,
    row: usize,
}

struct Engine<'a> {
    p: &'a Program,
    u: f64,
    terms: Vec<Term>,
    eq: Vec<EqRow>,
    free: Vec<bool>,
    local_weight_sum: f64,
}

struct Newton {
    dz: Vec<f64>,
    ds: f64,
    nu: Vec<f64>,
    decrement: f64,
}

impl<'a> Engine<'a> {
    fn new(p: &'a Program, u: f64) -> Result<Self> {
        let free: Vec<bool> = p.fixed.iter().map(|f| f.is_none()).collect();
        let mut terms = Vec::new();
        for (r, row) in p.global.iter().enumerate() {
            let coef: Vec<(usize, f64)> = row.coef.iter().copied().filter(|(j, _)| free[*j]).collect();
            let constant: f64 = row
                .coef
                .iter()
                .filter(|(j, _)| !free[*j])
                .map(|(j, c)| c * p.fixed[*j].unwrap())
                .sum();
            if coef.is_empty() {
                if constant < row.lower - 1e-9 || constant > row.upper + 1e-9 {
                    return Err(LfdError::Infeasible {
                        message: "a constraint on pinned values is violated".into(),
                        active_constraints: vec![row.id],
                    });
                }
                continue;
            }
            if row.lower.is_finite() {
                terms.push(Term {
                    coef: coef.clone(),
                    offset: constant - row.lower,
                    row: r,
                });
            }
            if row.upper.is_finite() {
                terms.push(Term {
                    coef: coef.iter().map(|(j, c)| (*j, -c)).collect(),
                    offset: row.upper - constant,
                    row: r,
                });
            }
        }
        let mut eq = Vec::new();
        for row in &p.eq {
            let coef: Vec<(usize, f64)> = row.coef.iter().copied().filter(|(j, _)| free[*j]).collect();
            let constant: f64 = row
                .coef
                .iter()
                .filter(|(j, _)| !free[*j])
                .map(|(j, c)| c * p.fixed[*j].unwrap())
                .sum();
            if coef.is_empty() {
                if (constant - row.rhs).abs() > 1e-8 {
                    return Err(LfdError::infeasible("pinned values violate an equality"));
                }
                continue;
            }
            eq.push(EqRow {
                coef,
                rhs: row.rhs - constant,
            });
        }
        let mut local_weight_sum = 0.0;
        for row in &p.local {
            for i in 0..p.n {
                if row.rhs[i].is_finite() && row.terms.iter().any(|(v, _)| free[i * p.b + v]) {
                    local_weight_sum += p.weights[i];
                }
            }
        }
        Ok(Self {
            p,
            u,
            terms,
            eq,
            free,
            local_weight_sum,
        })
    }

    fn local_active(&self, row: &LocalRow, i: usize) -> bool {
        row.rhs[i].is_finite() && row.terms.iter().any(|(v, _)| self.free[i * self.p.b + v])
    }

    fn local_slack(&self, row: &LocalRow, i: usize, z: &[f64]) -> f64 {
        let base = i * self.p.b;
        row.terms.iter().map(|(v, c)| c * z[base + v]).sum::<f64>() - row.rhs[i]
    }

    fn term_slack(&self, t: &Term, z: &[f64], s: f64, phase: Phase) -> f64 {
        let v: f64 = t.coef.iter().map(|(j, c)| c * z[*j]).sum::<f64>() + t.offset;
        if phase == Phase::Feasibility {
            v + s
        } else {
            v
        }
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let (o0, o1) = self.p.obj;
        let b = self.p.b;
        (0..self.p.n)
            .map(|i| {
                let g0 = z[i * b + o0].max(DENSITY_FLOOR);
                let g1 = z[i * b + o1].max(DENSITY_FLOOR);
                self.p.weights[i] * (self.u * g1.ln() + (1.0 - self.u) * g0.ln()).exp()
            })
            .sum()
    }

    fn eq_residual(&self, z: &[f64]) -> Vec<f64> {
        self.eq
            .iter()
            .map(|r| r.rhs - r.coef.iter().map(|(j, c)| c * z[*j]).sum::<f64>())
            .collect()
    }

    /// Barrier function value; `None` outside the strict interior.
    fn value(&self, z: &[f64], s: f64, tau: f64, phase: Phase) -> Option<f64> {
        let mut f = match phase {
            Phase::Feasibility => tau * s,
            Phase::Optimality => -tau * self.objective(z),
        };
        for row in &self.p.local {
            for i in 0..self.p.n {
                if self.local_active(row, i) {
                    let sl = self.local_slack(row, i, z);
                    if !(sl > 0.0) {
                        return None;
                    }
                    f -= self.p.weights[i] * sl.ln();
                }
            }
        }
        for t in &self.terms {
            let sl = self.term_slack(t, z, s, phase);
            if !(sl > 0.0) {
                return None;
            }
            f -= sl.ln();
        }
        Some(f)
    }

    fn newton(&self, z: &[f64], s: f64, tau: f64, phase: Phase) -> Result<Newton> {
        let p = self.p;
        let (n, b) = (p.n, p.b);
        let nt = self.terms.len();
        let ne = self.eq.len();
        let px = usize::from(phase == Phase::Feasibility);
        let q = nt + ne;

        // gradient and block Hessians
        let mut grad = vec![0.0; n * b];
        let mut blocks = vec![0.0; n * b * b];
        let (o0, o1) = p.obj;
        for i in 0..n {
            let base = i * b;
            let hb = &mut blocks[i * b * b..(i + 1) * b * b];
            if phase == Phase::Optimality {
                let g0 = z[base + o0].max(DENSITY_FLOOR);
                let g1 = z[base + o1].max(DENSITY_FLOOR);
                let d = p.weights[i] * (self.u * g1.ln() + (1.0 - self.u) * g0.ln()).exp();
                grad[base + o0] -= tau * (1.0 - self.u) * d / g0;
                grad[base + o1] -= tau * self.u * d / g1;
                let c = tau * self.u * (1.0 - self.u) * d;
                hb[o0 * b + o0] += c / (g0 * g0);
                hb[o1 * b + o1] += c / (g1 * g1);
                hb[o0 * b + o1] -= c / (g0 * g1);
                hb[o1 * b + o0] -= c / (g0 * g1);
            }
            for row in &p.local {
                if !self.local_active(row, i) {
                    continue;
                }
                let sl = self.local_slack(row, i, z);
                let w = p.weights[i];
                for (va, ca) in &row.terms {
                    grad[base + va] -= w * ca / sl;
                    for (vb, cb) in &row.terms {
                        hb[va * b + vb] += w * ca * cb / (sl * sl);
                    }
                }
            }
        }
        let mut grad_s = if px == 1 { tau } else { 0.0 };
        let mut term_slacks = Vec::with_capacity(nt);
        for t in &self.terms {
            let sl = self.term_slack(t, z, s, phase);
            for (j, c) in &t.coef {
                grad[*j] -= c / sl;
            }
            if px == 1 {
                grad_s -= 1.0 / sl;
            }
            term_slacks.push(sl);
        }
        for j in 0..n * b {
            if !self.free[j] {
                grad[j] = 0.0;
                let (i, v) = (j / b, j % b);
                let hb = &mut blocks[i * b * b..(i + 1) * b * b];
                for k in 0..b {
                    hb[v * b + k] = 0.0;
                    hb[k * b + v] = 0.0;
                }
                hb[v * b + v] = 1.0;
            }
        }

        // Q = [A^T | E^T] restricted per block
        let mut qmat = vec![0.0; n * b * q];
        for (k, t) in self.terms.iter().enumerate() {
            for (j, c) in &t.coef {
                qmat[j * q + k] += c;
            }
        }
        for (k, r) in self.eq.iter().enumerate() {
            for (j, c) in &r.coef {
                qmat[j * q + nt + k] += c;
            }
        }

        // explicit inverses of the small blocks and X = B^-1 Q
        let mut inv = vec![0.0; n * b * b];
        for i in 0..n {
            let hb = DMatrix::from_row_slice(b, b, &blocks[i * b * b..(i + 1) * b * b]);
            let hi = match hb.clone().cholesky() {
                Some(ch) => ch.inverse(),
                None => hb.try_inverse().ok_or_else(|| {
                    LfdError::convergence("barrier Newton step", "singular block", vec![i as f64])
                })?,
            };
            for r in 0..b {
                for c in 0..b {
                    inv[i * b * b + r * b + c] = hi[(r, c)];
                }
            }
        }
        let block_apply = |mats: &[f64], v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let mb = &mats[i * b * b..(i + 1) * b * b];
                for r in 0..b {
                    out[i * b + r] = (0..b).map(|c| mb[r * b + c] * v[i * b + c]).sum();
                }
            }
        };
        let mut x_all = vec![0.0; n * b * q];
        for i in 0..n {
            let mb = &inv[i * b * b..(i + 1) * b * b];
            for r in 0..b {
                for k in 0..q {
                    x_all[(i * b + r) * q + k] =
                        (0..b).map(|c| mb[r * b + c] * qmat[(i * b + c) * q + k]).sum();
                }
            }
        }

        // M = Q^T B^-1 Q
        let mut m = DMatrix::<f64>::zeros(q, q);
        for j in 0..n * b {
            let qrow = &qmat[j * q..(j + 1) * q];
            let xrow = &x_all[j * q..(j + 1) * q];
            for a in 0..q {
                if qrow[a] == 0.0 {
                    continue;
                }
                for c in 0..q {
                    m[(a, c)] += qrow[a] * xrow[c];
                }
            }
        }
        let dim = px + q;
        let mut sys = DMatrix::<f64>::zeros(dim, dim);
        for a in 0..q {
            for c in 0..q {
                sys[(px + a, px + c)] = -m[(a, c)];
            }
        }
        for k in 0..nt {
            sys[(px + k, px + k)] -= term_slacks[k] * term_slacks[k];
        }
        if px == 1 {
            for k in 0..nt {
                sys[(0, 1 + k)] = 1.0;
                sys[(1 + k, 0)] = 1.0;
            }
        }
        let lu = sys.lu();

        // Solves the full KKT system
        //   B dz + Q yn = rz,  A dz - D y + ds = ry,  E dz = re,  1'y = rs
        // by block elimination.
        let solve = |rz: &[f64], ry: &[f64], re: &[f64], rs: f64| -> Option<(Vec<f64>, Vec<f64>, f64)> {
            let mut v = vec![0.0; n * b];
            block_apply(&inv, rz, &mut v);
            let mut rhs = DVector::<f64>::zeros(dim);
            if px == 1 {
                rhs[0] = rs;
            }
            for k in 0..q {
                let qv: f64 = if k < nt {
                    self.terms[k].coef.iter().map(|(j, c)| c * v[*j]).sum()
                } else {
                    self.eq[k - nt].coef.iter().map(|(j, c)| c * v[*j]).sum()
                };
                rhs[px + k] = if k < nt { ry[k] } else { re[k - nt] } - qv;
            }
            let sol = lu.solve(&rhs)?;
            let yn: Vec<f64> = (0..q).map(|k| sol[px + k]).collect();
            let ds = if px == 1 { sol[0] } else { 0.0 };
            let dz: Vec<f64> = (0..n * b)
                .map(|j| {
                    if !self.free[j] {
                        return 0.0;
                    }
                    let xrow = &x_all[j * q..(j + 1) * q];
                    v[j] - xrow.iter().zip(&yn).map(|(x, y)| x * y).sum::<f64>()
                })
                .collect();
            Some((dz, yn, ds))
        };
        let singular =
            || LfdError::convergence("barrier Newton step", "singular reduced system", vec![]);
        let rz0: Vec<f64> = grad.iter().map(|g| -g).collect();
        let ry0 = vec![0.0; nt];
        let re0 = self.eq_residual(z);
        let rs0 = -grad_s;
        let (mut dz, mut yn, mut ds) = solve(&rz0, &ry0, &re0, rs0).ok_or_else(singular)?;
        for _ in 0..2 {
            let mut bdz = vec![0.0; n * b];
            block_apply(&blocks, &dz, &mut bdz);
            let rz: Vec<f64> = (0..n * b)
                .map(|j| {
                    if !self.free[j] {
                        return 0.0;
                    }
                    let qy: f64 = qmat[j * q..(j + 1) * q].iter().zip(&yn).map(|(a, y)| a * y).sum();
                    rz0[j] - bdz[j] - qy
                })
                .collect();
            let ry: Vec<f64> = (0..nt)
                .map(|k| {
                    let adz: f64 = self.terms[k].coef.iter().map(|(j, c)| c * dz[*j]).sum();
                    let sl2 = term_slacks[k] * term_slacks[k];
                    ry0[k] - (adz - sl2 * yn[k] + if px == 1 { ds } else { 0.0 })
                })
                .collect();
            let re: Vec<f64> = (0..ne)
                .map(|k| re0[k] - self.eq[k].coef.iter().map(|(j, c)| c * dz[*j]).sum::<f64>())
                .collect();
            let rs = if px == 1 { rs0 - yn[..nt].iter().sum::<f64>() } else { 0.0 };
            let (cz, cy, cs) = solve(&rz, &ry, &re, rs).ok_or_else(singular)?;
            dz.iter_mut().zip(&cz).for_each(|(a, c)| *a += c);
            yn.iter_mut().zip(&cy).for_each(|(a, c)| *a += c);
            ds += cs;
        }
        let decrement = -(grad.iter().zip(&dz).map(|(g, d)| g * d).sum::<f64>() + grad_s * ds);
        Ok(Newton {
            dz,
            ds,
            nu: yn,
            decrement,
        })
    }

    fn max_step(&self, z: &[f64], s: f64, step: &Newton, phase: Phase) -> f64 {
        let mut alpha = f64::INFINITY;
        let b = self.p.b;
        for row in &self.p.local {
            for i in 0..self.p.n {
                if !self.local_active(row, i) {
                    continue;
                }
                let d: f64 = row.terms.iter().map(|(v, c)| c * step.dz[i * b + v]).sum();
                if d < 0.0 {
                    alpha = alpha.min(self.local_slack(row, i, z) / -d);
                }
            }
        }
        for t in &self.terms {
            let mut d: f64 = t.coef.iter().map(|(j, c)| c * step.dz[*j]).sum();
            if phase == Phase::Feasibility {
                d += step.ds;
            }
            if d < 0.0 {
                alpha = alpha.min(self.term_slack(t, z, s, phase) / -d);
            }
        }
        alpha
    }

    /// Newton centering at fixed `tau`. Returns the reduced-system solution
    /// of the last step (global-row corrections followed by equality
    /// multipliers), the last step itself and the number of steps taken.
    fn center(
        &self,
        z: &mut Vec<f64>,
        s: &mut f64,
        tau: f64,
        phase: Phase,
        max_steps: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let eq_tol = 1e-11;
        let dec_tol = 1e-17 * tau.max(1.0);
        let mut last_nu = vec![0.0; self.terms.len() + self.eq.len()];
        let mut last_dz = vec![0.0; z.len()];
        for it in 0..max_steps {
            let step = self.newton(z, *s, tau, phase)?;
            last_nu = step.nu.clone();
            last_dz = step.dz.clone();
            let infeasible = self
                .eq_residual(z)
                .iter()
                .any(|r| r.abs() > eq_tol);
            if !infeasible && step.decrement <= dec_tol {
                return Ok((last_nu, last_dz, it));
            }
            if phase == Phase::Feasibility && !infeasible && *s < 0.0 && step.ds >= 0.0 && step.decrement < 1e-6 {
                return Ok((last_nu, last_dz, it));
            }
            let amax = self.max_step(z, *s, &step, phase);
            let mut alpha = (0.99 * amax).min(1.0);
            let apply = |z: &[f64], s: f64, a: f64| -> (Vec<f64>, f64) {
                (
                    z.iter().zip(&step.dz).map(|(v, d)| v + a * d).collect(),
                    s + a * step.ds,
                )
            };
            if infeasible || step.decrement < 0.1 {
                let mut moved = false;
                for _ in 0..60 {
                    let (nz, ns) = apply(z, *s, alpha);
                    if self.value(&nz, ns, tau, phase).is_some() {
                        *z = nz;
                        *s = ns;
                        moved = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !moved {
                    return Err(LfdError::convergence(
                        "barrier centering",
                        "no interior step along the Newton direction",
                        z.clone(),
                    ));
                }
                continue;
            }
            let f0 = self.value(z, *s, tau, phase).ok_or_else(|| {
                LfdError::convergence("barrier centering", "iterate left the interior", vec![])
            })?;
            let mut accepted = false;
            for _ in 0..60 {
                let (nz, ns) = apply(z, *s, alpha);
                if let Some(f1) = self.value(&nz, ns, tau, phase) {
                    if f1 <= f0 - 0.01 * alpha * step.decrement {
                        *z = nz;
                        *s = ns;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no further decrease is representable at this scale
                return Ok((last_nu, last_dz, it));
            }
        }
        Err(LfdError::convergence(
            "barrier centering",
            format!("no convergence within {max_steps} Newton steps at tau = {tau:e}"),
            z.clone(),
        ))
    }

    fn barrier_mass(&self) -> f64 {
        self.local_weight_sum + self.terms.len() as f64
    }

    fn feasibility(&self, z: &mut Vec<f64>, settings: &Settings) -> Result<usize> {
        let mut worst: f64 = 0.0;
        for t in &self.terms {
            worst = worst.max(-self.term_slack(t, z, 0.0, Phase::Optimality));
        }
        let mut s = worst + 1.0;
        let mut tau = 1.0;
        let mut steps = 0;
        let m = self.barrier_mass();
        for _ in 0..40 {
            let (_, _, it) = self.center(z, &mut s, tau, Phase::Feasibility, settings.max_newton)?;
            steps += it;
            if s < 0.0 {
                return Ok(steps);
            }
            if s - m / tau > 1e-10 || tau > 1e13 {
                let mut ranked: Vec<(f64, usize)> = self
                    .terms
                    .iter()
                    .map(|t| (self.term_slack(t, z, 0.0, Phase::Optimality), self.p.global[t.row].id))
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut active: Vec<usize> = ranked
                    .iter()
                    .filter(|(sl, _)| *sl <= 0.0)
                    .map(|(_, id)| *id)
                    .collect();
                active.dedup();
                return Err(LfdError::Infeasible {
                    message: format!("feasibility search stalled at relaxation {s:.3e}"),
                    active_constraints: active,
                });
            }
            tau *= 10.0;
        }
        Err(LfdError::convergence("feasibility phase", "stage budget exhausted", z.clone()))
    }

    /// KKT residual at `x = z + dz`, per unit quadrature weight.
    ///
    /// Multipliers of global rows are the barrier estimates at `z` corrected
    /// to first order by the Newton step `dz` (with reduced-system solution
    /// `dual`); equality multipliers come from `dual`. Multipliers of the
    /// local rows at each grid point are chosen to minimize that point's
    /// residual among the barrier estimate and every nonnegative
    /// least-squares fit on a subset of its rows. The result is the largest
    /// of the stationarity residual, the complementarity products, any
    /// negative multiplier and the equality residual.
    fn kkt_residual(&self, z: &[f64], dz: &[f64], dual: &[f64], tau: f64) -> f64 {
        let p = self.p;
        let b = p.b;
        let (o0, o1) = p.obj;
        let x: Vec<f64> = z.iter().zip(dz).map(|(a, d)| a + d).collect();
        let mut r = vec![0.0; p.n * b];
        for i in 0..p.n {
            let base = i * b;
            let g0 = x[base + o0].max(DENSITY_FLOOR);
            let g1 = x[base + o1].max(DENSITY_FLOOR);
            let d = p.weights[i] * (self.u * g1.ln() + (1.0 - self.u) * g0.ln()).exp();
            r[base + o0] -= (1.0 - self.u) * d / g0;
            r[base + o1] -= self.u * d / g1;
        }
        let mut worst: f64 = 0.0;
        let nt = self.terms.len();
        for (k, t) in self.terms.iter().enumerate() {
            let sl = self.term_slack(t, z, 0.0, Phase::Optimality);
            let lambda = (1.0 / sl - dual[k]) / tau;
            let sl_new = self.term_slack(t, &x, 0.0, Phase::Optimality);
            worst = worst.max((lambda * sl_new).abs()).max(-lambda);
            for (j, c) in &t.coef {
                r[*j] -= c * lambda;
            }
        }
        for (k, row) in self.eq.iter().enumerate() {
            for (j, c) in &row.coef {
                r[*j] += c * dual[nt + k] / tau;
            }
        }
        for i in 0..p.n {
            worst = worst.max(self.local_kkt(i, z, dz, &x, &r, tau));
        }
        let primal = self.eq_residual(&x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst.max(primal)
    }

    fn local_kkt(&self, i: usize, z: &[f64], dz: &[f64], x: &[f64], r: &[f64], tau: f64) -> f64 {
        let p = self.p;
        let b = p.b;
        let base = i * b;
        let w = p.weights[i];
        let rows: Vec<&LocalRow> = p.local.iter().filter(|row| self.local_active(row, i)).collect();
        let vars: Vec<usize> = (0..b).filter(|v| self.free[base + v]).collect();
        let slack: Vec<f64> = rows.iter().map(|row| self.local_slack(row, i, x)).collect();
        let coef = |k: usize, v: usize| -> f64 {
            rows[k].terms.iter().filter(|(t, _)| *t == v).map(|(_, c)| c).sum()
        };
        let score = |lambda: &[f64]| -> f64 {
            let mut e: f64 = 0.0;
            for &v in &vars {
                let res = r[base + v] - (0..rows.len()).map(|k| lambda[k] * coef(k, v)).sum::<f64>();
                e = e.max(res.abs() / w);
            }
            for k in 0..rows.len() {
                e = e.max((lambda[k] * slack[k]).abs() / w).max(-lambda[k] / w);
            }
            e
        };
        let barrier: Vec<f64> = rows
            .iter()
            .map(|row| {
                let sl = self.local_slack(row, i, z);
                let dsl: f64 = row.terms.iter().map(|(v, c)| c * dz[base + v]).sum();
                w / (tau * sl) * (1.0 - dsl / sl)
            })
            .collect();
        let mut best = score(&barrier).min(score(&vec![0.0; rows.len()]));
        if vars.is_empty() {
            return best;
        }
        for mask in 1usize..(1 << rows.len()) {
            let subset: Vec<usize> = (0..rows.len()).filter(|k| mask & (1 << k) != 0).collect();
            let c = DMatrix::from_fn(vars.len(), subset.len(), |a, k| coef(subset[k], vars[a]));
            let rhs = DVector::from_iterator(vars.len(), vars.iter().map(|v| r[base + v]));
            let Ok(fit) = c.svd(true, true).solve(&rhs, 1e-14) else {
                continue;
            };
            if fit.iter().any(|l| *l < 0.0) {
                continue;
            }
            let mut lambda = vec![0.0; rows.len()];
            for (k, idx) in subset.iter().enumerate() {
                lambda[*idx] = fit[k];
            }
            best = best.min(score(&lambda));
        }
        best
    }
}

/// Runs both phases from the strictly locally feasible start `z`.
pub(crate) fn solve(p: &Program, u: f64, mut z: Vec<f64>, settings: &Settings) -> Result<Outcome> {
    for (j, f) in p.fixed.iter().enumerate() {
        if let Some(v) = f {
            z[j] = *v;
        }
    }
    let engine = Engine::new(p, u)?;
    if !engine.free.iter().any(|f| *f) {
        return Ok(Outcome {
            objective: engine.objective(&z),
            z,
            kkt_residual: 0.0,
            active: Vec::new(),
            newton_steps: 0,
        });
    }
    for row in &p.local {
        for i in 0..p.n {
            if engine.local_active(row, i) && !(engine.local_slack(row, i, &z) > 0.0) {
                return Err(LfdError::convergence(
                    "barrier start",
                    format!("start point violates a local constraint at point {i}"),
                    vec![],
                ));
            }
        }
    }
    let mut steps = 0;
    if !engine.terms.is_empty() {
        steps += engine.feasibility(&mut z, settings)?;
    }
    let m = engine.barrier_mass();
    let mut tau = 1.0;
    let mut s = 0.0;
    let mut good: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = None;
    let (z, dz, nu, tau) = loop {
        let mut trial = z.clone();
        match engine.center(&mut trial, &mut s, tau, Phase::Optimality, settings.max_newton) {
            Ok((nu, dz, it)) => {
                steps += it;
                z = trial;
                if m / tau <= settings.gap_tol {
                    break (z, dz, nu, tau);
                }
                good = Some((z.clone(), dz, nu, tau));
                tau *= 10.0;
            }
            // rounding dominates the Newton systems at this barrier weight;
            // the last centered point is the best available answer
            Err(e) => match good.take() {
                Some(g) if tau > 1e6 => break g,
                _ => return Err(e),
            },
        }
    };
    // one more Newton step lands on a point where the step's multipliers
    // certify stationarity to second order
    let stepped: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a + d).collect();
    let (z, kkt) = if engine.value(&stepped, 0.0, tau, Phase::Optimality).is_some() {
        let kkt = engine.kkt_residual(&z, &dz, &nu, tau);
        (stepped, kkt)
    } else {
        let kkt = engine.kkt_residual(&z, &vec![0.0; z.len()], &nu, tau);
        (z, kkt)
    };
    let mut active: Vec<usize> = engine
        .terms
        .iter()
        .filter(|t| engine.term_slack(t, &z, 0.0, Phase::Optimality) <= 1e-6)
        .map(|t| p.global[t.row].id)
        .collect();
    active.sort_unstable();
    active.dedup();
    Ok(Outcome {
        objective: engine.objective(&z),
        z,
        kkt_residual: kkt,
        active,
        newton_steps: steps,
    })
}
