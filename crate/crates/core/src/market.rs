//! Shared domain types: the circular type space, preference densities,
//! surplus functions, friction parameters and share profiles.
//!
//! Everything here is discretized on a [`Grid`] of `n` equal cells covering
//! the unit circle. Values stored per grid point are cell-center samples and
//! integrals use the periodic midpoint rule (uniform weights `1/n`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest grid the solvers accept.
pub const MIN_GRID_POINTS: usize = 16;
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Circular distance on the unit circle, `min_k |x - y + k|`.
///
/// Inputs outside `[0, 1)` are wrapped first; the result lies in `[0, 1/2]`.
pub fn circular_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Wraps a coordinate into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Uniform discretization of the unit circle into `n` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_points: usize,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < MIN_GRID_POINTS {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {n_points}"
            )));
        }
        Ok(Grid { n_points })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n_points as f64
    }

    /// Center of cell `i`.
    pub fn point(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_points as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Index of the cell containing `x` (after wrapping).
    pub fn cell_of(&self, x: f64) -> usize {
        let i = (wrap_unit(x) * self.n_points as f64).floor() as usize;
        i.min(self.n_points - 1)
    }

    /// Periodic midpoint rule.
    pub fn quadrature(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        quadrature(values)
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Periodic midpoint rule for cell-center samples on `[0, 1)`.
pub fn quadrature(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Shape of an agent-type density before discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreferenceKind {
    Uniform,
    /// Constant density on the arc `[lo, hi]`, zero elsewhere.
    Block {
        lo: f64,
        hi: f64,
        height: f64,
    },
    WrappedGaussian {
        center: f64,
        sd: f64,
    },
    /// Mixture `weight * N(c1, sd1) + (1 - weight) * N(c2, sd2)`, wrapped.
    DoublePeak {
        c1: f64,
        sd1: f64,
        c2: f64,
        sd2: f64,
        weight: f64,
    },
    /// Triangular density rising on `[lo, mode]` and falling on `[mode, hi]`.
    /// `hi - lo` must not exceed 1; the support wraps around the circle.
    Triangular {
        lo: f64,
        mode: f64,
        hi: f64,
    },
}

impl PreferenceKind {
    fn validate(&self) -> Result<()> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite")))
            }
        };
        match *self {
            PreferenceKind::Uniform => Ok(()),
            PreferenceKind::Block { lo, hi, height } => {
                finite(lo, "lo")?;
                finite(hi, "hi")?;
                if !(lo < hi) || hi - lo > 1.0 {
                    return Err(Error::invalid(format!("block needs lo < hi <= lo + 1, got [{lo}, {hi}]")));
                }
                if !(height > 0.0) {
                    return Err(Error::invalid("block height must be positive"));
                }
                Ok(())
            }
            PreferenceKind::WrappedGaussian { center, sd } => {
                finite(center, "center")?;
                if !(sd > 0.0) || !sd.is_finite() {
                    return Err(Error::invalid(format!("sd must be positive, got {sd}")));
                }
                Ok(())
            }
            PreferenceKind::DoublePeak {
                c1,
                sd1,
                c2,
                sd2,
                weight,
            } => {
                finite(c1, "c1")?;
                finite(c2, "c2")?;
                if !(sd1 > 0.0 && sd2 > 0.0) {
                    return Err(Error::invalid("peak widths must be positive"));
                }
                if !(0.0..=1.0).contains(&weight) {
                    return Err(Error::invalid("peak weight must lie in [0, 1]"));
                }
                Ok(())
            }
            PreferenceKind::Triangular { lo, mode, hi } => {
                finite(lo, "lo")?;
                finite(hi, "hi")?;
                if !(lo < mode && mode < hi) || hi - lo > 1.0 {
                    return Err(Error::invalid("triangular needs lo < mode < hi <= lo + 1"));
                }
                Ok(())
            }
        }
    }

    /// Unnormalized density at `x`.
    fn raw_density(&self, x: f64) -> f64 {
        match *self {
            PreferenceKind::Uniform => 1.0,
            PreferenceKind::Block { lo, hi, height } => {
                let offset = (x - lo).rem_euclid(1.0);
                if offset <= hi - lo {
                    height
                } else {
                    0.0
                }
            }
            PreferenceKind::WrappedGaussian { center, sd } => wrapped_gaussian(x, center, sd),
            PreferenceKind::DoublePeak {
                c1,
                sd1,
                c2,
                sd2,
                weight,
            } => weight * wrapped_gaussian(x, c1, sd1) + (1.0 - weight) * wrapped_gaussian(x, c2, sd2),
            PreferenceKind::Triangular { lo, mode, hi } => {
                let t = (x - lo).rem_euclid(1.0);
                let rise = mode - lo;
                let width = hi - lo;
                if t <= rise {
                    t / rise
                } else if t <= width {
                    (width - t) / (width - rise)
                } else {
                    0.0
                }
            }
        }
    }
}

fn wrapped_gaussian(x: f64, center: f64, sd: f64) -> f64 {
    let wraps = (4.0 * sd).ceil().max(1.0) as i64 + 1;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    (-wraps..=wraps)
        .map(|k| {
            let z = (x - center + k as f64) / sd;
            norm * (-0.5 * z * z).exp()
        })
        .sum()
}

/// Density of agent types on the circle, normalized to unit mass under the
/// grid quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDistribution {
    grid: Grid,
    density: Vec<f64>,
}

impl PreferenceDistribution {
    pub fn new(kind: &PreferenceKind, grid: &Grid) -> Result<Self> {
        kind.validate()?;
        let raw: Vec<f64> = grid.points().into_iter().map(|x| kind.raw_density(x)).collect();
        Self::from_values(grid.clone(), raw)
    }

    /// Builds a distribution from arbitrary nonnegative cell values,
    /// renormalizing them to unit mass.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "expected {} density values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("density values must be finite and nonnegative"));
        }
        let mass = grid.quadrature(&values);
        if !(mass > 0.0) {
            return Err(Error::invalid("density is zero on every grid cell"));
        }
        let density = values.into_iter().map(|v| v / mass).collect();
        Ok(PreferenceDistribution { grid, density })
    }

    pub fn uniform(grid: &Grid) -> Self {
        PreferenceDistribution {
            grid: grid.clone(),
            density: vec![1.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn max(&self) -> f64 {
        self.density.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.density.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.density)
    }

    /// Variance of the density around its mean value 1.
    pub fn variance(&self) -> f64 {
        centered_variance(&self.density)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn centered_variance(values: &[f64]) -> f64 {
    quadrature(&values.iter().map(|v| (v - 1.0) * (v - 1.0)).collect::<Vec<_>>())
}

/// Decreasing transform applied to circular distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurplusFunction {
    /// `intercept - slope * d`
    Linear { intercept: f64, slope: f64 },
    /// `scale * exp(-rate * d)`
    Exponential { scale: f64, rate: f64 },
}

impl Default for SurplusFunction {
    fn default() -> Self {
        SurplusFunction::Linear {
            intercept: 1.0,
            slope: 1.0,
        }
    }
}

impl SurplusFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SurplusFunction::Linear { intercept, slope } => {
                if !(slope > 0.0) || !intercept.is_finite() || !slope.is_finite() {
                    return Err(Error::invalid("linear surplus needs a finite positive slope"));
                }
            }
            SurplusFunction::Exponential { scale, rate } => {
                if !(scale > 0.0 && rate > 0.0) || !scale.is_finite() || !rate.is_finite() {
                    return Err(Error::invalid("exponential surplus needs positive scale and rate"));
                }
            }
        }
        Ok(())
    }

    /// `f(d)` for a distance `d` in `[0, 1/2]`.
    pub fn value_at_distance(&self, d: f64) -> f64 {
        match *self {
            SurplusFunction::Linear { intercept, slope } => intercept - slope * d,
            SurplusFunction::Exponential { scale, rate } => scale * (-rate * d).exp(),
        }
    }

    /// Same preference ordering, all values multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            SurplusFunction::Linear { intercept, slope } => SurplusFunction::Linear {
                intercept: intercept * factor,
                slope: slope * factor,
            },
            SurplusFunction::Exponential { scale, rate } => SurplusFunction::Exponential {
                scale: scale * factor,
                rate,
            },
        }
    }
}

/// Match value `f(d(x, y))`.
pub fn surplus(sf: &SurplusFunction, x: f64, y: f64) -> f64 {
    sf.value_at_distance(circular_distance(x, y))
}

/// Exit rate, meeting intensity, unmatched/matched meeting ratio and the
/// slope of meeting rates in market share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub mu: f64,
    pub lambda_tot: f64,
    pub k: f64,
    pub alpha: f64,
}

impl FrictionParams {
    pub fn new(mu: f64, lambda_tot: f64, k: f64, alpha: f64) -> Result<Self> {
        let p = FrictionParams {
            mu,
            lambda_tot,
            k,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with `lambda_tot = 1`, `K = 1` and the requested friction
    /// intensity.
    pub fn from_rf(r_f: f64, alpha: f64) -> Result<Self> {
        Self::new(r_f, 1.0, 1.0, alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.lambda_tot > 0.0) || !self.lambda_tot.is_finite() {
            return Err(Error::invalid(format!(
                "lambda_tot must be positive, got {}",
                self.lambda_tot
            )));
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::invalid(format!("K must be positive, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Friction intensity `mu / lambda_tot`.
    pub fn r_f(&self) -> f64 {
        self.mu / self.lambda_tot
    }

    /// Steady-state unmatched fraction `mu / (K lambda_tot + mu)`.
    pub fn unmatched_fraction(&self) -> f64 {
        self.mu / (self.k * self.lambda_tot + self.mu)
    }
}

/// Rescaled market-share density `s(y)` on a grid (unit mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareProfile {
    grid: Grid,
    shares: Vec<f64>,
}

pub const DEFAULT_MASS_TOLERANCE: f64 = 1e-6;

impl ShareProfile {
    pub fn new(grid: Grid, shares: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(grid, shares, DEFAULT_MASS_TOLERANCE)
    }

    pub fn with_tolerance(grid: Grid, shares: Vec<f64>, tol: f64) -> Result<Self> {
        if shares.len() != grid.len() {
            return Err(Error::invalid("share vector length does not match the grid"));
        }
        if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("shares must be finite and nonnegative"));
        }
        let mass = grid.quadrature(&shares);
        if (mass - 1.0).abs() > tol {
            return Err(Error::invalid(format!("share profile has mass {mass}, expected 1")));
        }
        Ok(ShareProfile { grid, shares })
    }

    pub(crate) fn from_trusted(grid: Grid, shares: Vec<f64>) -> Self {
        ShareProfile { grid, shares }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn into_shares(self) -> Vec<f64> {
        self.shares
    }

    pub fn mass(&self) -> f64 {
        self.grid.quadrature(&self.shares)
    }

    /// Largest absolute difference to another profile on the same grid.
    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        sup_distance(&self.shares, other)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
