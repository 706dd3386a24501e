//! Affinities, distances and f-divergences between grid densities.

use serde::{Deserialize, Serialize};

use crate::error::{LfdError, Result};
use crate::grid::{GridDensity, DENSITY_FLOOR};

/// Exponent `u` of the u-affinity, restricted to the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct UAffinityParam(f64);

impl UAffinityParam {
    pub fn new(u: f64) -> Result<Self> {
        if u > 0.0 && u < 1.0 {
            Ok(Self(u))
        } else {
            Err(LfdError::InvalidParameter(format!("u must lie in (0, 1), got {u}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `sum_i w_i g1_i^u g0_i^(1-u)`, computed in the log domain with the
/// density floor applied before taking logarithms.
pub fn u_affinity(g0: &GridDensity, g1: &GridDensity, u: UAffinityParam) -> Result<f64> {
    g0.same_grid(g1, "u_affinity arguments")?;
    Ok(u_affinity_values(g0.grid().weights().as_slice(), g0.values(), g1.values(), u.value()))
}

pub(crate) fn u_affinity_values(w: &[f64], g0: &[f64], g1: &[f64], u: f64) -> f64 {
    w.iter()
        .zip(g0.iter().zip(g1))
        .map(|(w, (a, b))| {
            let la = a.max(DENSITY_FLOOR).ln();
            let lb = b.max(DENSITY_FLOOR).ln();
            w * (u * lb + (1.0 - u) * la).exp()
        })
        .sum()
}

/// Total variation distance `0.5 * sum_i w_i |g0_i - g1_i|`.
pub fn tv_distance(g0: &GridDensity, g1: &GridDensity) -> Result<f64> {
    g0.same_grid(g1, "tv_distance arguments")?;
    let grid = g0.grid();
    Ok(0.5
        * g0
            .values()
            .iter()
            .zip(g1.values())
            .enumerate()
            .map(|(i, (a, b))| grid.weight(i) * (a - b).abs())
            .sum::<f64>())
}

/// Supported f-divergences, evaluated as `sum_i w_i g1_i f(g0_i / g1_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FDivergence {
    /// `f(t) = t ln t`, the Kullback-Leibler divergence of `g0` from `g1`.
    Kl,
    /// `f(t) = -ln t`.
    ReverseKl,
    /// `f(t) = (sqrt(t) - 1)^2`.
    SquaredHellinger,
}

impl FDivergence {
    pub const ALL: [FDivergence; 3] = [
        FDivergence::Kl,
        FDivergence::ReverseKl,
        FDivergence::SquaredHellinger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FDivergence::Kl => "kl",
            FDivergence::ReverseKl => "reverse_kl",
            FDivergence::SquaredHellinger => "squared_hellinger",
        }
    }

    fn term(self, a: f64, b: f64) -> f64 {
        match self {
            FDivergence::Kl => {
                if a <= 0.0 {
                    0.0
                } else {
                    a * (a / b.max(DENSITY_FLOOR)).ln()
                }
            }
            FDivergence::ReverseKl => {
                if b <= 0.0 {
                    0.0
                } else {
                    b * (b / a.max(DENSITY_FLOOR)).ln()
                }
            }
            FDivergence::SquaredHellinger => {
                let d = a.sqrt() - b.sqrt();
                d * d
            }
        }
    }
}

/// f-divergence of `g0` with respect to `g1`.
pub fn f_divergence(g0: &GridDensity, g1: &GridDensity, kind: FDivergence) -> Result<f64> {
    g0.same_grid(g1, "f_divergence arguments")?;
    let grid = g0.grid();
    Ok(g0
        .values()
        .iter()
        .zip(g1.values())
        .enumerate()
        .map(|(i, (a, b))| grid.weight(i) * kind.term(*a, *b))
        .sum())
}

/// Pointwise ratio `g1 / g0` with the floor applied to the denominator.
pub fn likelihood_ratio(g1: &GridDensity, g0: &GridDensity) -> Result<Vec<f64>> {
    g0.same_grid(g1, "likelihood_ratio arguments")?;
    Ok(ratio_values(g1.values(), g0.values()))
}

pub(crate) fn ratio_values(num: &[f64], den: &[f64]) -> Vec<f64> {
    num.iter()
        .zip(den)
        .map(|(a, b)| a / b.max(DENSITY_FLOOR))
        .collect()
}
