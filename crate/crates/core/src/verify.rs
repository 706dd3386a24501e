//! Checks on a solved least favorable pair.
//!
//! The test statistic is `S_n = (1/n) sum_k X_k` with `X_k = log l(Y_k)`,
//! where `l` is the robust likelihood ratio on the grid. The test decides
//! for the alternative when `S_n >= t`.
//!
//! Everything random is driven by explicit seeds. Monte Carlo trial `k` under
//! hypothesis `j` draws from its own generator seeded with
//! `derive_seed(seed, j, k)`, so sequential and parallel execution give the
//! same counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::band::{random_member, BandSpec};
use crate::contamination::{random_contamination, ContaminationSpec, Direction};
use crate::convex::Hypothesis;
use crate::divergence::{f_divergence, FDivergence};
use crate::error::{LfdError, Result};
use crate::exec::Execution;
use crate::grid::{derive_seed, random_spline, GridDensity, GridSampler, DENSITY_FLOOR};
use crate::roots::golden_max;
use crate::tv::TvSpec;

/// Largest exponential tilt searched by [`cramer_rate`].
pub const MAX_TILT: f64 = 50.0;

fn default_prior() -> f64 {
    0.5
}

/// Decision threshold and simulation size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    /// Threshold on the averaged log-likelihood ratio.
    pub threshold: f64,
    /// Prior probability of the null hypothesis, used for the error rate.
    #[serde(default = "default_prior")]
    pub prior0: f64,
    pub sample_size: usize,
    pub trials: usize,
    pub seed: u64,
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(LfdError::InvalidParameter("threshold must be finite".into()));
        }
        if !(self.prior0 > 0.0 && self.prior0 < 1.0) {
            return Err(LfdError::InvalidParameter(format!(
                "prior0 must lie in (0, 1), got {}",
                self.prior0
            )));
        }
        if self.sample_size == 0 || self.trials == 0 {
            return Err(LfdError::InvalidParameter(
                "sample_size and trials must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn log_lrf(lrf: &[f64]) -> Vec<f64> {
    lrf.iter().map(|v| v.max(DENSITY_FLOOR).ln()).collect()
}

fn expectation(g: &GridDensity, x: &[f64]) -> f64 {
    let grid = g.grid();
    g.values()
        .iter()
        .zip(x)
        .enumerate()
        .map(|(i, (gv, xv))| grid.weight(i) * gv * xv)
        .sum()
}

/// Means of `X = log l` under both densities around a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub mean0: f64,
    pub threshold: f64,
    pub mean1: f64,
    /// `mean0 < threshold < mean1`
    pub holds: bool,
}

pub fn threshold_separation(
    g0: &GridDensity,
    g1: &GridDensity,
    lrf: &[f64],
    t: f64,
) -> Result<Separation> {
    g0.same_grid(g1, "separation densities")?;
    g0.grid().check_len(lrf.len())?;
    let x = log_lrf(lrf);
    let (mean0, mean1) = (expectation(g0, &x), expectation(g1, &x));
    Ok(Separation {
        mean0,
        threshold: t,
        mean1,
        holds: mean0 < t && t < mean1,
    })
}

/// Which tail of `S_n` the rate describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// `P[S_n > t]`, the false-alarm side under the null.
    Upper,
    /// `P[S_n < t]`, the miss side under the alternative.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    /// Maximizing tilt `s`.
    pub tilt: f64,
    /// The maximizer sits at `+-MAX_TILT`; the true rate may be larger.
    pub at_boundary: bool,
    /// Variance of `X` under the exponentially tilted density at `tilt`.
    pub tilted_variance: f64,
}

/// Legendre transform of the log-MGF of `X = log l` under `g`,
/// `sup_s [s t - log E_g exp(s X)]`, over `s >= 0` for the upper tail and
/// `s <= 0` for the lower tail.
pub fn cramer_rate(g: &GridDensity, lrf: &[f64], t: f64, tail: Tail) -> Result<Rate> {
    g.grid().check_len(lrf.len())?;
    let grid = g.grid();
    let x = log_lrf(lrf);
    let support: Vec<(f64, f64)> = (0..x.len())
        .filter_map(|i| {
            let m = grid.weight(i) * g.values()[i];
            (m > 0.0).then(|| (m.ln(), x[i]))
        })
        .collect();
    let log_mgf = |s: f64| {
        let top = support
            .iter()
            .map(|(lm, xv)| lm + s * xv)
            .fold(f64::NEG_INFINITY, f64::max);
        top + support.iter().map(|(lm, xv)| (lm + s * xv - top).exp()).sum::<f64>().ln()
    };
    let objective = |s: f64| s * t - log_mgf(s);
    let (lo, hi) = match tail {
        Tail::Upper => (0.0, MAX_TILT),
        Tail::Lower => (-MAX_TILT, 0.0),
    };
    let (tilt, best) = golden_max(objective, lo, hi, 1e-10);
    // the objective vanishes at s = 0, so the rate is never negative
    let (tilt, rate) = if best > 0.0 { (tilt, best) } else { (0.0, 0.0) };
    let lm = log_mgf(tilt);
    let (mut m1, mut m2) = (0.0, 0.0);
    for (l, xv) in &support {
        let p = (l + tilt * xv - lm).exp();
        m1 += p * xv;
        m2 += p * xv * xv;
    }
    Ok(Rate {
        rate,
        tilt,
        at_boundary: (tilt.abs() - MAX_TILT).abs() < 1e-6,
        tilted_variance: (m2 - m1 * m1).max(0.0),
    })
}

/// Error probability estimates with binomial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_false_alarm: f64,
    pub p_miss: f64,
    pub p_error: f64,
    pub se_false_alarm: f64,
    pub se_miss: f64,
    pub se_error: f64,
    pub trials: usize,
}

/// Simulates the test `S_n >= t` with samples from `g0_true` and `g1_true`.
///
/// Sampled points fall between grid nodes; `log l` is interpolated linearly,
/// which is exact for Gaussian shift families.
pub fn monte_carlo_test(
    g0_true: &GridDensity,
    g1_true: &GridDensity,
    lrf: &[f64],
    cfg: &TestConfig,
    execution: Execution,
) -> Result<McEstimate> {
    g0_true.same_grid(g1_true, "Monte Carlo densities")?;
    let pf = error_rate(g0_true, lrf, cfg, Hypothesis::H0, execution)?;
    let pm = error_rate(g1_true, lrf, cfg, Hypothesis::H1, execution)?;
    let se = |p: f64| (p * (1.0 - p) / cfg.trials as f64).sqrt();
    let pi0 = cfg.prior0;
    Ok(McEstimate {
        p_false_alarm: pf,
        p_miss: pm,
        p_error: pi0 * pf + (1.0 - pi0) * pm,
        se_false_alarm: se(pf),
        se_miss: se(pm),
        se_error: (pi0 * pi0 * se(pf).powi(2) + (1.0 - pi0).powi(2) * se(pm).powi(2)).sqrt(),
        trials: cfg.trials,
    })
}

/// Fraction of wrong decisions when the data follow `g` and `truth` holds:
/// the false-alarm rate for `H0`, the miss rate for `H1`.
pub fn error_rate(
    g: &GridDensity,
    lrf: &[f64],
    cfg: &TestConfig,
    truth: Hypothesis,
    execution: Execution,
) -> Result<f64> {
    cfg.validate()?;
    let grid = *g.grid();
    grid.check_len(lrf.len())?;
    let x = log_lrf(lrf);
    let sampler = GridSampler::new(g);
    let stream = truth.index() as u64;
    let statistic = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream, k as u64));
        let sum: f64 = (0..cfg.sample_size)
            .map(|_| {
                let (i, frac) = grid.locate(sampler.sample(&mut rng)).expect("samples stay on the grid");
                x[i] + frac * (x[i + 1] - x[i])
            })
            .sum();
        sum / cfg.sample_size as f64
    };
    let t = cfg.threshold;
    let wrong = match truth {
        Hypothesis::H0 => execution.count(cfg.trials, |k| statistic(k) >= t),
        Hypothesis::H1 => execution.count(cfg.trials, |k| statistic(k) < t),
    };
    Ok(wrong as f64 / cfg.trials as f64)
}

/// Exponent estimate `-(1/n) log p` corrected by the Bahadur-Rao prefactor
/// `|s| sigma sqrt(2 pi n)` of a tail probability `p` at sample size `n`.
pub fn refined_exponent(p: f64, n: usize, rate: &Rate) -> f64 {
    let n = n as f64;
    let prefactor = rate.tilt.abs() * rate.tilted_variance.sqrt() * (2.0 * std::f64::consts::PI * n).sqrt();
    -(p * prefactor).ln() / n
}

/// Seeded source of class members.
pub trait ClassSampler: Sync {
    fn member(&self, h: Hypothesis, seed: u64) -> Result<GridDensity>;
}

/// Members of a total-variation ball.
///
/// A random share of the radius is removed from a random set of grid points
/// and spread over the remaining points, so the distance to the nominal
/// density equals the moved mass.
#[derive(Debug, Clone)]
pub struct TvSampler(pub TvSpec);

impl ClassSampler for TvSampler {
    fn member(&self, h: Hypothesis, seed: u64) -> Result<GridDensity> {
        let (f, eps) = match h {
            Hypothesis::H0 => (self.0.f0(), self.0.eps0()),
            Hypothesis::H1 => (self.0.f1(), self.0.eps1()),
        };
        tv_member(f, eps, seed)
    }
}

fn tv_member(f: &GridDensity, eps: f64, seed: u64) -> Result<GridDensity> {
    let grid = *f.grid();
    let fv = f.values();
    if eps == 0.0 {
        return Ok(f.clone());
    }
    let split = random_spline(&grid, 16, 0.0, derive_seed(seed, 1, 0));
    let take = random_spline(&grid, 12, 0.0, derive_seed(seed, 2, 0));
    let give = random_spline(&grid, 12, 0.0, derive_seed(seed, 3, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, 0));
    let cut = 0.3 + 0.4 * rng.random::<f64>();
    // share of the radius in [0, 1), biased toward the boundary of the ball
    let share = rng.random::<f64>().powf(0.25);
    let donor: Vec<bool> = split.iter().map(|s| *s > cut).collect();

    let removal: Vec<f64> = (0..fv.len())
        .map(|i| if donor[i] { take[i] * fv[i] } else { 0.0 })
        .collect();
    let available = grid.integrate(&removal)?;
    let moved = (eps * share).min(available);
    let gift: Vec<f64> = (0..fv.len())
        .map(|i| if donor[i] { 0.0 } else { give[i] * (fv[i] + 1e-3) })
        .collect();
    let gift_mass = grid.integrate(&gift)?;
    if !(moved > 0.0 && gift_mass > 0.0) {
        return Ok(f.clone());
    }
    let values = (0..fv.len())
        .map(|i| {
            let out = removal[i] * moved / available;
            let inn = gift[i] * moved / gift_mass;
            (fv[i] - out + inn).max(0.0)
        })
        .collect();
    GridDensity::new(grid, values)
}

/// Members `(1 -+ eps) f -+ eps h` of a contamination class with random `h`.
#[derive(Debug, Clone)]
pub struct ContaminationSampler(pub ContaminationSpec);

impl ClassSampler for ContaminationSampler {
    fn member(&self, h: Hypothesis, seed: u64) -> Result<GridDensity> {
        let spec = &self.0;
        let (f, eps) = match h {
            Hypothesis::H0 => (spec.f0(), spec.eps0()),
            Hypothesis::H1 => (spec.f1(), spec.eps1()),
        };
        let noise = random_contamination(spec, seed)?;
        let values = f
            .values()
            .iter()
            .zip(noise.values())
            .map(|(fv, hv)| match spec.direction() {
                Direction::Lower => (1.0 - eps) * fv + eps * hv,
                Direction::Upper => ((1.0 + eps) * fv - eps * hv).max(0.0),
            })
            .collect();
        GridDensity::normalized(*f.grid(), values)
    }
}

/// Random densities between the bounding functions of a band.
#[derive(Debug, Clone)]
pub struct BandSampler(pub BandSpec);

impl ClassSampler for BandSampler {
    fn member(&self, h: Hypothesis, seed: u64) -> Result<GridDensity> {
        random_member(&self.0, h, seed)
    }
}

/// `count` member pairs; pair `k` uses seeds derived from `(seed, k)`.
pub fn sample_pairs(
    sampler: &dyn ClassSampler,
    count: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<(GridDensity, GridDensity)>> {
    execution
        .map(count, |k| {
            Ok((
                sampler.member(Hypothesis::H0, derive_seed(seed, 10, k as u64))?,
                sampler.member(Hypothesis::H1, derive_seed(seed, 11, k as u64))?,
            ))
        })
        .into_iter()
        .collect()
}

/// Probabilities of `{l < t}` under a member pair and under the LFDs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingProbabilities {
    pub g0: f64,
    pub lfd0: f64,
    pub g1: f64,
    pub lfd1: f64,
}

impl OrderingProbabilities {
    /// Smallest of `G0 - G0_hat` and `G1_hat - G1`; nonnegative when the
    /// stochastic ordering holds at this threshold.
    pub fn margin(&self) -> f64 {
        (self.g0 - self.lfd0).min(self.lfd1 - self.g1)
    }
}

pub fn ordering_probabilities(
    lfd: (&GridDensity, &GridDensity),
    member: (&GridDensity, &GridDensity),
    lrf: &[f64],
    t: f64,
) -> OrderingProbabilities {
    let event = |i: usize| lrf[i] < t;
    OrderingProbabilities {
        g0: member.0.probability_where(event),
        lfd0: lfd.0.probability_where(event),
        g1: member.1.probability_where(event),
        lfd1: lfd.1.probability_where(event),
    }
}

/// `count` ratio-scale thresholds spread log-uniformly over the range of
/// `lrf`, extended slightly beyond both ends.
pub fn ordering_thresholds(lrf: &[f64], count: usize) -> Vec<f64> {
    let positive = lrf.iter().copied().filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if count == 0 || !(lo <= hi) {
        return Vec::new();
    }
    let (a, b) = ((lo * 0.999).ln(), (hi * 1.001).ln());
    (0..count)
        .map(|k| {
            let f = if count == 1 { 0.5 } else { k as f64 / (count - 1) as f64 };
            (a + f * (b - a)).exp()
        })
        .collect()
}

/// Smallest ordering margin over all member pairs and thresholds.
pub fn worst_ordering_margin(
    lfd: (&GridDensity, &GridDensity),
    members: &[(GridDensity, GridDensity)],
    lrf: &[f64],
    thresholds: &[f64],
) -> f64 {
    members
        .iter()
        .flat_map(|(g0, g1)| {
            thresholds
                .iter()
                .map(move |&t| ordering_probabilities(lfd, (g0, g1), lrf, t).margin())
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest AMR margin over member pairs: the member rates minus the LFD
/// rates, upper tail under the null and lower tail under the alternative.
pub fn worst_amr_margin(
    lfd: (&GridDensity, &GridDensity),
    members: &[(GridDensity, GridDensity)],
    lrf: &[f64],
    t: f64,
) -> Result<f64> {
    let r0 = cramer_rate(lfd.0, lrf, t, Tail::Upper)?.rate;
    let r1 = cramer_rate(lfd.1, lrf, t, Tail::Lower)?.rate;
    let mut worst = f64::INFINITY;
    for (g0, g1) in members {
        let m0 = cramer_rate(g0, lrf, t, Tail::Upper)?.rate - r0;
        let m1 = cramer_rate(g1, lrf, t, Tail::Lower)?.rate - r1;
        worst = worst.min(m0).min(m1);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdivRow {
    pub kind: FDivergence,
    pub at_lfd: f64,
    pub sampled_min: f64,
    /// `sampled_min - at_lfd`; nonnegative when the LFDs are minimal.
    pub margin: f64,
}

/// Compares each divergence at the LFDs with its minimum over member pairs.
pub fn fdiv_minimality_check(
    lfd0: &GridDensity,
    lfd1: &GridDensity,
    members: &[(GridDensity, GridDensity)],
    kinds: &[FDivergence],
) -> Result<Vec<FdivRow>> {
    kinds
        .iter()
        .map(|&kind| {
            let at_lfd = f_divergence(lfd0, lfd1, kind)?;
            let mut sampled_min = f64::INFINITY;
            for (g0, g1) in members {
                sampled_min = sampled_min.min(f_divergence(g0, g1, kind)?);
            }
            Ok(FdivRow {
                kind,
                at_lfd,
                sampled_min,
                margin: sampled_min - at_lfd,
            })
        })
        .collect()
}

fn default_members() -> usize {
    200
}

fn default_thresholds() -> usize {
    20
}

/// Settings of [`verify_solution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub test: TestConfig,
    /// Number of sampled member pairs.
    #[serde(default = "default_members")]
    pub members: usize,
    /// Number of ordering thresholds.
    #[serde(default = "default_thresholds")]
    pub thresholds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    /// Upper-tail rate under `lfd0` (false alarm).
    pub rate0: Rate,
    /// Lower-tail rate under `lfd1` (miss).
    pub rate1: Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub pass: bool,
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub separation: Separation,
    pub exponents: Exponents,
    /// Error rates of the robust test when the data follow the LFDs.
    pub mc_errors: McEstimate,
    /// Present when the class can be sampled.
    pub ordering: Option<MarginCheck>,
    pub amr: Option<MarginCheck>,
    pub fdiv_table: Vec<FdivRow>,
    pub sampled_members: usize,
}

impl VerifyReport {
    /// Separation holds and every sampled check has a nonnegative margin
    /// up to `tol`.
    pub fn all_pass(&self) -> bool {
        self.separation.holds
            && self.ordering.is_none_or(|c| c.pass)
            && self.amr.is_none_or(|c| c.pass)
            && self.fdiv_table.iter().all(|r| r.margin >= -FDIV_TOL)
    }
}

const ORDERING_TOL: f64 = 1e-10;
const AMR_TOL: f64 = 1e-6;
const FDIV_TOL: f64 = 1e-8;

/// Runs every check on a solved pair. Checks that need class members are
/// skipped when `sampler` is `None`.
pub fn verify_solution(
    lfd0: &GridDensity,
    lfd1: &GridDensity,
    lrf: &[f64],
    sampler: Option<&dyn ClassSampler>,
    cfg: &VerifyConfig,
    execution: Execution,
) -> Result<VerifyReport> {
    let t = cfg.test.threshold;
    let separation = threshold_separation(lfd0, lfd1, lrf, t)?;
    let exponents = Exponents {
        rate0: cramer_rate(lfd0, lrf, t, Tail::Upper)?,
        rate1: cramer_rate(lfd1, lrf, t, Tail::Lower)?,
    };
    let mc_errors = monte_carlo_test(lfd0, lfd1, lrf, &cfg.test, execution)?;
    let (mut ordering, mut amr, mut fdiv_table, mut sampled) = (None, None, Vec::new(), 0);
    if let Some(sampler) = sampler {
        let members = sample_pairs(sampler, cfg.members, cfg.test.seed, execution)?;
        sampled = members.len();
        let thresholds = ordering_thresholds(lrf, cfg.thresholds);
        let w = worst_ordering_margin((lfd0, lfd1), &members, lrf, &thresholds);
        ordering = Some(MarginCheck {
            pass: w >= -ORDERING_TOL,
            worst_margin: w,
        });
        let w = worst_amr_margin((lfd0, lfd1), &members, lrf, t)?;
        amr = Some(MarginCheck {
            pass: w >= -AMR_TOL,
            worst_margin: w,
        });
        fdiv_table = fdiv_minimality_check(lfd0, lfd1, &members, &FDivergence::ALL)?;
    }
    Ok(VerifyReport {
        separation,
        exponents,
        mc_errors,
        ordering,
        amr,
        fdiv_table,
        sampled_members: sampled,
    })
}
