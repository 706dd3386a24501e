//! Uniform grids, trapezoidal quadrature and discretized densities.
//!
//! Every integral in the crate is a trapezoidal sum over a [`Grid`]. Densities
//! are stored as their values at the grid points and normalized so that the
//! trapezoidal mass is one.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LfdError, Result};

/// Floor substituted for zero density values whenever a ratio or a
/// fractional power is formed.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Tolerance on the trapezoidal mass of a normalized density.
pub const MASS_TOLERANCE: f64 = 1e-8;

/// Uniform grid `x_i = x_min + i * dx` for `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
    dx: f64,
}

impl Grid {
    /// Builds a grid with `n >= 2` points spanning `[x_min, x_max]`.
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() || x_min >= x_max {
            return Err(LfdError::InvalidGrid(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n < 2 {
            return Err(LfdError::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        let dx = (x_max - x_min) / (n - 1) as f64;
        Ok(Self { x_min, x_max, n, dx })
    }

    /// Default grid for the closed-form solvers: 2001 points on `[-12, 12]`.
    pub fn standard() -> Self {
        Self::new(-12.0, 12.0, 2001).expect("static grid is valid")
    }

    /// Default grid for the convex solver: 201 points on `[-6, 6]`.
    pub fn convex_default() -> Self {
        Self::new(-6.0, 6.0, 201).expect("static grid is valid")
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Grid point `i`.
    pub fn point(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Trapezoidal weight of point `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.weight(i)).collect()
    }

    /// Trapezoidal integral of `values`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * v)
            .sum())
    }

    /// Locates `x` as `(cell, fraction)` with `x = x_cell + fraction * dx`.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        if !(x >= self.x_min && x <= self.x_max) {
            return Err(LfdError::OutOfDomain {
                x,
                x_min: self.x_min,
                x_max: self.x_max,
            });
        }
        let pos = (x - self.x_min) / self.dx;
        let cell = (pos.floor() as usize).min(self.n - 2);
        Ok((cell, (pos - cell as f64).clamp(0.0, 1.0)))
    }

    /// Linear interpolation of grid values at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Result<f64> {
        self.check_len(values.len())?;
        let (i, frac) = self.locate(x)?;
        Ok(values[i] + frac * (values[i + 1] - values[i]))
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(LfdError::DimensionMismatch {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::standard()
    }
}

/// Trapezoidal integral of `values` over `grid`.
pub fn trapezoid_integral(grid: &Grid, values: &[f64]) -> Result<f64> {
    grid.integrate(values)
}

/// Gaussian density with mean `mean` and variance `variance`.
pub fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    (-0.5 * z * z / variance).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Nonnegative function sampled on a grid, with no mass constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(LfdError::DegenerateDensity(format!(
                "value {v} at index {i} is negative or not finite"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.points().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values).expect("length checked")
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|v| v * factor).collect())
    }
}

/// Density on a grid with unit trapezoidal mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Wraps values that already integrate to one within [`MASS_TOLERANCE`].
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let f = GridFunction::new(grid, values)?;
        let mass = f.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(LfdError::DegenerateDensity(format!(
                "trapezoidal mass {mass} differs from one"
            )));
        }
        Ok(Self {
            grid,
            values: f.values,
        })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let f = GridFunction::new(grid, values)?;
        let mass = f.mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(LfdError::DegenerateDensity(format!(
                "cannot normalize values with mass {mass}"
            )));
        }
        // rescaling by a mass that is one up to rounding would only move the
        // last bits, so already-normalized input is returned unchanged
        if (mass - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { grid, values: f.values });
        }
        Ok(Self {
            grid,
            values: f.values.into_iter().map(|v| v / mass).collect(),
        })
    }

    /// Samples `f` at the grid points and normalizes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::normalized(grid, grid.points().into_iter().map(f).collect())
    }

    /// Gaussian with the given mean and variance, renormalized on the grid.
    pub fn gaussian(grid: Grid, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(LfdError::InvalidParameter(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Self::from_fn(grid, |x| gaussian_pdf(x, mean, variance))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values).expect("length checked")
    }

    /// Expectation of `h(x)` under the density.
    pub fn expectation(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v * h(self.grid.point(i)))
            .sum()
    }

    /// Probability of the grid points whose index satisfies `pred`.
    pub fn probability_where(&self, pred: impl Fn(usize) -> bool) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| pred(*i))
            .map(|(i, v)| self.grid.weight(i) * v)
            .sum()
    }

    pub(crate) fn same_grid(&self, other: &GridDensity, what: &str) -> Result<()> {
        if self.grid != other.grid {
            return Err(LfdError::GridMismatch(what.to_string()));
        }
        Ok(())
    }
}

/// Inverse-CDF sampler for a [`GridDensity`] treated as piecewise linear.
///
/// A cell is drawn with probability equal to its trapezoidal mass and the
/// point is then placed inside the cell by inverting the linear density.
#[derive(Debug, Clone)]
pub struct GridSampler {
    x_min: f64,
    dx: f64,
    cumulative: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl GridSampler {
    pub fn new(density: &GridDensity) -> Self {
        let v = density.values();
        let grid = density.grid();
        let cells = v.len() - 1;
        let mut cumulative = Vec::with_capacity(cells);
        let mut acc = 0.0;
        for i in 0..cells {
            acc += 0.5 * grid.dx() * (v[i] + v[i + 1]);
            cumulative.push(acc);
        }
        Self {
            x_min: grid.x_min(),
            dx: grid.dx(),
            cumulative,
            left: v[..cells].to_vec(),
            right: v[1..].to_vec(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().expect("grid has cells");
        let target = rng.random::<f64>() * total;
        let cell = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1);
        let a = self.left[cell];
        let b = self.right[cell];
        let u: f64 = rng.random();
        // Invert F(s) = a s + (b - a) s^2 / 2 normalized by (a + b) / 2 on [0, 1].
        let frac = if (b - a).abs() <= 1e-12 * (a + b) {
            u
        } else {
            let mass = 0.5 * (a + b);
            let disc = a * a + 2.0 * (b - a) * u * mass;
            ((disc.max(0.0).sqrt() - a) / (b - a)).clamp(0.0, 1.0)
        };
        self.x_min + (cell as f64 + frac) * self.dx
    }
}

/// Draws `count` points from `density` using a ChaCha generator seeded with `seed`.
pub fn sample_from(density: &GridDensity, count: usize, seed: u64) -> Vec<f64> {
    let sampler = GridSampler::new(density);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sampler.sample(&mut rng)).collect()
}

/// Deterministic 64-bit mix of a seed and two stream indices.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Smooth random weights in `[lo, 1]`: linear interpolation of `knots`
/// uniformly drawn knot values across the grid.
pub fn random_spline(grid: &Grid, knots: usize, lo: f64, seed: u64) -> Vec<f64> {
    let knots = knots.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heights: Vec<f64> = (0..knots).map(|_| lo + (1.0 - lo) * rng.random::<f64>()).collect();
    (0..grid.len())
        .map(|i| {
            let pos = i as f64 / (grid.len() - 1) as f64 * (knots - 1) as f64;
            let k = (pos.floor() as usize).min(knots - 2);
            let f = pos - k as f64;
            heights[k] + f * (heights[k + 1] - heights[k])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_length() {
        let g = Grid::new(-2.0, 3.0, 11).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 5.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let g = Grid::new(0.0, 1.0, 7).unwrap();
        let v: Vec<f64> = g.points().iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((g.integrate(&v).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert!(Grid::new(f64::NAN, 1.0, 10).is_err());
    }

    #[test]
    fn normalization_and_mass_check() {
        let g = Grid::new(-1.0, 1.0, 5).unwrap();
        let d = GridDensity::normalized(g, vec![1.0; 5]).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-15);
        assert!(GridDensity::new(g, vec![1.0; 5]).is_err());
        assert!(GridDensity::normalized(g, vec![0.0; 5]).is_err());
        assert!(GridDensity::normalized(g, vec![1.0, -1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn locate_and_interpolate() {
        let g = Grid::new(0.0, 4.0, 5).unwrap();
        let v = vec![0.0, 1.0, 4.0, 9.0, 16.0];
        assert_eq!(g.interpolate(&v, 2.5).unwrap(), 6.5);
        assert_eq!(g.interpolate(&v, 4.0).unwrap(), 16.0);
        assert!(g.locate(4.0001).is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_in_range() {
        let g = Grid::new(-3.0, 3.0, 61).unwrap();
        let d = GridDensity::gaussian(g, 0.0, 1.0).unwrap();
        let a = sample_from(&d, 100, 7);
        let b = sample_from(&d, 100, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|x| (-3.0..=3.0).contains(x)));
    }

    #[test]
    fn spline_within_bounds() {
        let g = Grid::standard();
        let s = random_spline(&g, 9, 0.25, 3);
        assert!(s.iter().all(|v| (0.25..=1.0).contains(v)));
    }
}
