//! Continuum of firms and agents on the unit circle.
//!
//! Agent types `x` have density `ell`, firm types `y` are uniform. A matched
//! agent leaves her firm when she exits (rate `mu`) or meets a firm she
//! strictly prefers. With surplus `f(d(x, y))` and `f` strictly decreasing,
//! the better set of an `(x, y)` match is the open arc of radius `d(x, y)`
//! around `x`, so nothing below depends on the particular `f`.
//!
//! Densities and meeting rates are piecewise constant on grid cells; shares
//! are reported at cell centers. Integrals over agent types are done exactly
//! for piecewise-constant data: inside a quarter cell the better-set measure
//! is linear in `x`, and `∫ dx / (r + B(x))^2` over a piece on which `B` goes
//! linearly from `B0` to `B1` is `len / ((r + B0)(r + B1))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{
    argmax, centered_variance, quadrature, sup_distance, FrictionParams, Grid, PreferenceDistribution, ShareProfile,
};

/// Largest meeting-rate slope accepted by the fixed-point solver.
pub const ALPHA_CAP: f64 = 0.999;

/// Constant-rate smoothing kernel `r (r + 1) / (r + 2 d(t))^2`.
pub fn constant_rate_kernel(r_f: f64, t: f64) -> f64 {
    let d = crate::market::circular_distance(t, 0.0);
    r_f * (r_f + 1.0) / ((r_f + 2.0 * d) * (r_f + 2.0 * d))
}

/// `∫_0^t K` for `t` in `[-1/2, 1/2]`.
fn kernel_antiderivative(r_f: f64, t: f64) -> f64 {
    let c = 0.5 * r_f * (r_f + 1.0);
    t.signum() * c * (1.0 / r_f - 1.0 / (r_f + 2.0 * t.abs()))
}

fn kernel_integral(r_f: f64, a: f64, b: f64) -> f64 {
    // a <= b, both within [-1/2, 1/2] after the caller's wrapping
    kernel_antiderivative(r_f, b) - kernel_antiderivative(r_f, a)
}

/// Exact integral of the kernel over each cell offset `k = 0..n`, i.e. over
/// `t` in `[(k - 1/2)/n, (k + 1/2)/n]` taken modulo 1. Sums to 1.
pub fn kernel_cell_weights(r_f: f64, grid: &Grid) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing();
    (0..n)
        .map(|k| {
            // signed offset in (-n/2, n/2]
            let ks = if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
            let a = (ks - 0.5) * h;
            let b = (ks + 0.5) * h;
            if b > 0.5 {
                kernel_integral(r_f, a, 0.5) + kernel_integral(r_f, -0.5, b - 1.0)
            } else if a < -0.5 {
                kernel_integral(r_f, a + 1.0, 0.5) + kernel_integral(r_f, -0.5, b)
            } else {
                kernel_integral(r_f, a, b)
            }
        })
        .collect()
}

/// Cell averages of the kernel. Their quadrature is the kernel mass, 1.
pub fn kernel_cell_averages(r_f: f64, grid: &Grid) -> Vec<f64> {
    let n = grid.len() as f64;
    kernel_cell_weights(r_f, grid).into_iter().map(|w| w * n).collect()
}

fn check_rf(r_f: f64) -> Result<()> {
    if !(r_f > 0.0) || !r_f.is_finite() {
        return Err(Error::invalid(format!("r_f must be positive and finite, got {r_f}")));
    }
    Ok(())
}

/// Equilibrium shares with constant meeting rates: the circular convolution
/// of `ell` with the smoothing kernel.
pub fn solve_constant_rate(ell: &PreferenceDistribution, r_f: f64) -> Result<ShareProfile> {
    check_rf(r_f)?;
    let grid = ell.grid();
    let n = grid.len();
    let weights = kernel_cell_weights(r_f, grid);
    let dens = ell.density();
    let shares: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (j, l) in dens.iter().enumerate() {
                if *l != 0.0 {
                    acc += l * weights[(j + n - i) % n];
                }
            }
            acc
        })
        .collect();
    Ok(ShareProfile::from_trusted(grid.clone(), shares))
}

/// Cumulative measure of a piecewise-constant rate profile, extended
/// periodically. Positions are in cell units.
struct Cumulative {
    prefix: Vec<f64>,
    rates: Vec<f64>,
    n: f64,
}

impl Cumulative {
    fn new(rates: &[f64]) -> Self {
        let mut prefix = Vec::with_capacity(rates.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for r in rates {
            acc += r;
            prefix.push(acc);
        }
        Cumulative {
            prefix,
            rates: rates.to_vec(),
            n: rates.len() as f64,
        }
    }

    fn total(&self) -> f64 {
        self.prefix[self.rates.len()]
    }

    /// `∫_0^u rate` in cell units (not divided by n).
    fn at(&self, u: f64) -> f64 {
        let wraps = (u / self.n).floor();
        let v = u - wraps * self.n;
        let m = (v.floor() as usize).min(self.rates.len() - 1);
        wraps * self.total() + self.prefix[m] + (v - m as f64) * self.rates[m]
    }

    /// Measure (in real units) of the strictly better arc for an agent at
    /// `x` matched with a firm at `y`, both in cell units.
    fn better_measure(&self, x: f64, y: f64) -> f64 {
        let half = 0.5 * self.n;
        let mut delta = (x - y).rem_euclid(self.n);
        if delta > half {
            delta -= self.n;
        }
        let far = y + 2.0 * delta;
        (self.at(far) - self.at(y)).abs() / self.n
    }
}

/// Better-set measure `∫ 1[d(x,y') < d(x,y)] w(y') dy'` for a
/// piecewise-constant weight profile `w` on a grid.
pub struct BetterSet {
    cumulative: Cumulative,
}

impl BetterSet {
    pub fn new(weights: &[f64]) -> Self {
        BetterSet {
            cumulative: Cumulative::new(weights),
        }
    }

    /// `x`, `y` are coordinates on the unit circle.
    pub fn measure(&self, x: f64, y: f64) -> f64 {
        let n = self.cumulative.n;
        self.cumulative.better_measure(x * n, y * n)
    }
}

/// Better-set measures at quarter-cell agent positions for cell-center
/// firms. At those positions the reflected point `2x - y` always lands on a
/// half-cell position, so one table of cumulative weights covers all pairs.
pub(crate) struct QuarterTable {
    /// Cumulative weight at half-cell positions in `[-n, 2n]`, cell units.
    table: Vec<f64>,
    n: usize,
}

impl QuarterTable {
    pub(crate) fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let cum = Cumulative::new(weights);
        let table = (0..=6 * n).map(|k| cum.at(k as f64 * 0.5 - n as f64)).collect();
        QuarterTable { table, n }
    }

    /// `B(q / 4n, y_i)` for `q` in `0..=4n`, returned as a closure over `q`.
    pub(crate) fn row(&self, i: usize) -> impl Fn(usize) -> f64 + '_ {
        let (half, full) = (2 * self.n as i64, 4 * self.n as i64);
        let i = i as i64;
        let inv_n = 1.0 / self.n as f64;
        let own = self.table[(2 * i + 1 + half) as usize];
        move |q| {
            let mut d = q as i64 - (4 * i + 2);
            if d > half {
                d -= full;
            } else if d < -half {
                d += full;
            }
            (self.table[(2 * i + 1 + d + half) as usize] - own).abs() * inv_n
        }
    }
}

/// For each firm cell `i`, `r (r+1) ∫ ell(x) / (r + B(x, y_i))^2 dx` where
/// `B` is the better-set measure under the relative meeting weights
/// `weights` (mean 1 when shares have unit mass).
fn arrival_integral(ell: &[f64], weights: &[f64], r_f: f64) -> Vec<f64> {
    let n = ell.len();
    let quarters = QuarterTable::new(weights);
    let scale = r_f * (r_f + 1.0) * 0.25 / n as f64;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let better = quarters.row(i);
            let mut acc = 0.0;
            let mut b_prev = r_f + better(0);
            for (j, l) in ell.iter().enumerate() {
                let mut cell = 0.0;
                for q in 4 * j + 1..=4 * j + 4 {
                    let b = r_f + better(q);
                    cell += 1.0 / (b_prev * b);
                    b_prev = b;
                }
                acc += l * cell;
            }
            scale * acc
        })
        .collect()
}

/// Relative meeting weights `alpha s + (1 - alpha)`.
pub fn meeting_weights(alpha: f64, shares: &[f64]) -> Vec<f64> {
    shares.iter().map(|s| alpha * s + (1.0 - alpha)).collect()
}

/// One application of the equilibrium map: shares implied by the meeting
/// weights built from `shares`. The result is not renormalized.
pub fn share_map(ell: &PreferenceDistribution, r_f: f64, alpha: f64, shares: &[f64]) -> Vec<f64> {
    let weights = meeting_weights(alpha, shares);
    let inner = arrival_integral(ell.density(), &weights, r_f);
    weights.iter().zip(inner).map(|(w, v)| w * v).collect()
}

/// Unmatched mass by type, `ell mu / (K lambda_tot + mu)`.
pub fn unmatched_profile(ell: &PreferenceDistribution, frictions: &FrictionParams) -> Vec<f64> {
    let f = frictions.unmatched_fraction();
    ell.density().iter().map(|l| l * f).collect()
}

/// Destruction rate `mu + ∫ 1[σ(x,y') > σ(x,y)] λ(y') dy'` of an `(x, y)`
/// match under a piecewise-constant meeting-rate profile on `grid`.
pub fn destruction_rate(x: f64, y: f64, lambda_profile: &[f64], mu: f64) -> f64 {
    mu + BetterSet::new(lambda_profile).measure(x, y)
}

/// Density of `(x, y)` matches, averaged over each agent-type cell.
#[derive(Debug, Clone, Serialize)]
pub struct MatchDensity {
    grid: Grid,
    /// Row-major, `values[x * n + y]`.
    values: Vec<f64>,
}

impl MatchDensity {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.grid.len() + y]
    }

    /// Mass of agents of type cell `x` that are matched, `∫ h(x, y) dy`.
    pub fn type_mass(&self, x: usize) -> f64 {
        let n = self.grid.len();
        quadrature(&self.values[x * n..(x + 1) * n])
    }

    /// Density of agents matched with firm `y`, `∫ h(x, y) dx`.
    pub fn firm_mass(&self, y: usize) -> f64 {
        let n = self.grid.len();
        (0..n).map(|x| self.values[x * n + y]).sum::<f64>() / n as f64
    }

    pub fn total_mass(&self) -> f64 {
        quadrature(&(0..self.grid.len()).map(|y| self.firm_mass(y)).collect::<Vec<_>>())
    }

    /// Firm-size distribution rescaled to unit mass.
    pub fn shares(&self) -> Vec<f64> {
        let n = self.grid.len();
        let masses: Vec<f64> = (0..n).map(|y| self.firm_mass(y)).collect();
        let total = quadrature(&masses);
        masses.into_iter().map(|m| m / total).collect()
    }
}

fn check_lambda_profile(grid: &Grid, lambda_profile: &[f64]) -> Result<()> {
    if lambda_profile.len() != grid.len() {
        return Err(Error::invalid("meeting-rate profile length does not match the grid"));
    }
    if lambda_profile.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::invalid("meeting rates must be finite and nonnegative"));
    }
    Ok(())
}

/// Steady-state match density
/// `h(x, y) = u(x) λ(y) K (mu + lambda_tot) / G(x, y)^2`
/// for a given matched-agent meeting-rate profile `λ` (which should
/// integrate to `lambda_tot`).
pub fn match_density(ell: &PreferenceDistribution, lambda_profile: &[f64], frictions: &FrictionParams) -> Result<MatchDensity> {
    frictions.validate()?;
    let grid = ell.grid();
    check_lambda_profile(grid, lambda_profile)?;
    let n = grid.len();
    let mu = frictions.mu;
    let lambda_tot = grid.quadrature(lambda_profile);
    if ((lambda_tot - frictions.lambda_tot) / frictions.lambda_tot).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "meeting-rate profile integrates to {lambda_tot}, expected {}",
            frictions.lambda_tot
        )));
    }
    let u = unmatched_profile(ell, frictions);
    let cum = Cumulative::new(lambda_profile);
    let coef = frictions.k * (mu + frictions.lambda_tot);
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        for (i, out) in row.iter_mut().enumerate() {
            let y = i as f64 + 0.5;
            let mut cell = 0.0;
            let mut g_prev = mu + cum.better_measure(j as f64, y);
            for t in 1..=4 {
                let g = mu + cum.better_measure(j as f64 + 0.25 * t as f64, y);
                cell += 0.25 / (g_prev * g);
                g_prev = g;
            }
            *out = coef * u[j] * lambda_profile[i] * cell;
        }
    });
    Ok(MatchDensity {
        grid: grid.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Sup-norm size of an iteration step below which the solve stops.
    pub tolerance: f64,
    /// Weight on the freshly mapped profile, in `(0, 1]`.
    pub damping: f64,
    pub renormalize: bool,
    pub alpha_cap: f64,
    /// Anderson mixing depth; 0 runs the plain damped iteration.
    pub acceleration: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 10_000,
            tolerance: 1e-10,
            damping: 0.5,
            renormalize: true,
            alpha_cap: ALPHA_CAP,
            acceleration: 0,
        }
    }
}

impl SolveOptions {
    /// Defaults with Anderson mixing of depth 5, for long sweeps near the
    /// slope cap where the plain iteration contracts slowly.
    pub fn accelerated() -> Self {
        SolveOptions {
            acceleration: 5,
            ..SolveOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        if !(self.alpha_cap > 0.0 && self.alpha_cap <= 1.0) {
            return Err(Error::invalid("alpha_cap must lie in (0, 1]"));
        }
        if self.acceleration > 50 {
            return Err(Error::invalid("acceleration depth must be at most 50"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Size of the last iteration step.
    pub last_step: f64,
    /// `sup |F(s) - s|` at the returned profile.
    pub residual: f64,
    /// Mass of the unnormalized map output at the returned profile.
    pub map_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointSolution {
    pub profile: ShareProfile,
    pub report: ConvergenceReport,
}

/// Solves `s = (alpha s + 1 - alpha) · r (r+1) ∫ ell(x) / (r + B_s(x, y))^2 dx`
/// by damped fixed-point iteration started at `ell`.
pub fn solve_fixed_point(
    ell: &PreferenceDistribution,
    frictions: &FrictionParams,
    opts: &SolveOptions,
) -> Result<FixedPointSolution> {
    solve_fixed_point_from(ell, frictions, opts, ell.density())
}

/// Least-squares coefficients `argmin |f - Σ γ_j df_j|` through regularized
/// normal equations; `None` when the system is numerically singular.
fn mixing_coefficients(df: &[Vec<f64>], f: &[f64]) -> Option<Vec<f64>> {
    let m = df.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut a = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = dot(&df[i], &df[j]);
        }
        a[i][m] = dot(&df[i], f);
    }
    let trace: f64 = (0..m).map(|i| a[i][i]).sum();
    if !(trace > 0.0) {
        return None;
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-12 * trace;
    }
    // Gaussian elimination with partial pivoting
    for col in 0..m {
        let piv = (col..m).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs()))?;
        a.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            return None;
        }
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in rest.iter_mut() {
            let factor = row[col] / pivot_row[col];
            for (v, p) in row[col..=m].iter_mut().zip(&pivot_row[col..=m]) {
                *v -= factor * p;
            }
        }
    }
    let mut gamma = vec![0.0; m];
    for i in (0..m).rev() {
        let tail: f64 = (i + 1..m).map(|k| a[i][k] * gamma[k]).sum();
        gamma[i] = (a[i][m] - tail) / a[i][i];
    }
    gamma.iter().all(|g| g.is_finite()).then_some(gamma)
}

/// As [`solve_fixed_point`] with an explicit starting profile.
pub fn solve_fixed_point_from(
    ell: &PreferenceDistribution,
    frictions: &FrictionParams,
    opts: &SolveOptions,
    initial: &[f64],
) -> Result<FixedPointSolution> {
    frictions.validate()?;
    opts.validate()?;
    let alpha = frictions.alpha;
    if alpha > opts.alpha_cap {
        return Err(Error::invalid(format!(
            "alpha {alpha} exceeds the solver cap {}",
            opts.alpha_cap
        )));
    }
    let r_f = frictions.r_f();
    check_rf(r_f)?;
    let grid = ell.grid().clone();
    if initial.len() != grid.len() {
        return Err(Error::invalid("initial profile length does not match the grid"));
    }

    let apply = |s: &[f64]| -> (Vec<f64>, f64) {
        let mut f = share_map(ell, r_f, alpha, s);
        let mass = quadrature(&f);
        if opts.renormalize {
            for v in f.iter_mut() {
                *v = v.max(0.0) / mass;
            }
        }
        (f, mass)
    };
    let tidy = |s: &mut Vec<f64>| {
        if opts.renormalize {
            s.iter_mut().for_each(|v| *v = v.max(0.0));
            let mass = quadrature(s);
            s.iter_mut().for_each(|v| *v /= mass);
        }
    };

    let depth = opts.acceleration;
    let mut s = initial.to_vec();
    let mut last_step = f64::INFINITY;
    // histories of residual and map-output differences for Anderson mixing
    let mut d_res: Vec<Vec<f64>> = Vec::new();
    let mut d_map: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for it in 1..=opts.max_iterations {
        let (g, _) = apply(&s);
        let res: Vec<f64> = g.iter().zip(&s).map(|(a, b)| a - b).collect();
        let mut next: Vec<f64> = s.iter().zip(&res).map(|(a, r)| a + opts.damping * r).collect();
        if depth > 0 {
            if let Some((g_old, r_old)) = prev.take() {
                d_res.push(res.iter().zip(&r_old).map(|(a, b)| a - b).collect());
                d_map.push(g.iter().zip(&g_old).map(|(a, b)| a - b).collect());
                if d_res.len() > depth {
                    d_res.remove(0);
                    d_map.remove(0);
                }
            }
            if !d_res.is_empty() {
                if let Some(gamma) = mixing_coefficients(&d_res, &res) {
                    for (k, gk) in gamma.iter().enumerate() {
                        for idx in 0..next.len() {
                            let dx = d_map[k][idx] - d_res[k][idx];
                            next[idx] -= gk * (dx + opts.damping * d_res[k][idx]);
                        }
                    }
                } else {
                    d_res.clear();
                    d_map.clear();
                }
            }
            prev = Some((g, res));
        }
        tidy(&mut next);
        last_step = sup_distance(&next, &s);
        s = next;
        if last_step < opts.tolerance {
            let (f, map_mass) = apply(&s);
            let residual = sup_distance(&f, &s);
            log::debug!("fixed point converged in {it} iterations, residual {residual:.3e}, map mass {map_mass}");
            return Ok(FixedPointSolution {
                profile: ShareProfile::from_trusted(grid, s),
                report: ConvergenceReport {
                    iterations: it,
                    last_step,
                    residual,
                    map_mass,
                },
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual: last_step,
    })
}

/// Summary statistics of a share profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileStats {
    /// `∫ (s - 1)^2`, the mean of a unit-mass profile being 1.
    pub variance: f64,
    pub max: f64,
    pub min: f64,
    pub argmax: f64,
}

pub fn profile_stats(profile: &ShareProfile) -> ProfileStats {
    stats_of(profile.grid(), profile.shares())
}

pub(crate) fn stats_of(grid: &Grid, values: &[f64]) -> ProfileStats {
    ProfileStats {
        variance: centered_variance(values),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        argmax: grid.point(argmax(values)),
    }
}

/// Share mass within circular distance `radius` of `center`, counting
/// cells whose center lies in the window.
pub fn mass_within(profile: &ShareProfile, center: f64, radius: f64) -> f64 {
    let grid = profile.grid();
    profile
        .shares()
        .iter()
        .enumerate()
        .filter(|(i, _)| crate::market::circular_distance(grid.point(*i), center) <= radius)
        .map(|(_, s)| s)
        .sum::<f64>()
        / grid.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianPoint {
    /// Location where both half-circle arcs starting at it carry mass 1/2.
    pub y_star: f64,
    /// Grid cell containing `y_star`.
    pub cell: usize,
}

const MEDIAN_TOL: f64 = 1e-12;

/// Point `y*` such that every half-circle arc not containing it carries
/// strictly less than half of the mass of `ell`.
pub fn median_point(ell: &PreferenceDistribution) -> Result<MedianPoint> {
    let grid = ell.grid();
    let n = grid.len();
    let cum = Cumulative::new(ell.density());
    let nf = n as f64;
    // excess mass of the arc [a, a + 1/2] over 1/2, with a in cell units;
    // piecewise linear between half-cell positions
    let excess = |a: f64| (cum.at(a + 0.5 * nf) - cum.at(a)) / nf - 0.5;
    let samples = 2 * n;
    let pos = |q: usize| q as f64 * 0.5;
    let vals: Vec<f64> = (0..samples).map(|q| excess(pos(q))).collect();

    let mut found: Vec<f64> = Vec::new();
    for q in 0..samples {
        let (e0, e1) = (vals[q], vals[(q + 1) % samples]);
        if e0 > MEDIAN_TOL && e1 <= MEDIAN_TOL {
            // downward crossing of 1/2
            let t = if e0 - e1 > 0.0 { e0 / (e0 - e1) } else { 0.0 };
            let a = pos(q) + 0.5 * t.min(1.0);
            // every arc starting strictly inside (a, a + 1/2) must be light
            let ok = (0..samples).all(|k| {
                let off = (pos(k) - a).rem_euclid(nf);
                if off <= 0.5 || off >= 0.5 * nf - 0.5 {
                    true
                } else {
                    vals[k] < -MEDIAN_TOL
                }
            });
            if ok {
                found.push(a);
            }
        }
    }
    match found.as_slice() {
        [a] => {
            let y_star = crate::market::wrap_unit(a / nf);
            Ok(MedianPoint {
                y_star,
                cell: grid.cell_of(y_star),
            })
        }
        [] => Err(Error::Degenerate(
            "no point splits the preference mass into two light half circles".into(),
        )),
        _ => Err(Error::Degenerate(format!("{} candidate median points", found.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::PreferenceKind;

    fn gaussian(n: usize, center: f64, sd: f64) -> PreferenceDistribution {
        PreferenceDistribution::new(&PreferenceKind::WrappedGaussian { center, sd }, &Grid::new(n).unwrap()).unwrap()
    }

    fn block(n: usize, lo: f64, hi: f64) -> PreferenceDistribution {
        PreferenceDistribution::new(&PreferenceKind::Block { lo, hi, height: 1.0 }, &Grid::new(n).unwrap()).unwrap()
    }

    /// Composite Gauss-Legendre on [a, b]; test oracle.
    fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let nodes = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        let weights = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights) {
                acc += w * f(c + 0.5 * h * x) * 0.5 * h;
            }
        }
        acc
    }

    #[test]
    fn kernel_mass_is_one() {
        for r in [1e-3, 0.05, 0.3, 1.0, 7.0, 100.0] {
            // analytic antiderivative over the whole circle
            let total = kernel_integral(r, -0.5, 0.5);
            assert!((total - 1.0).abs() < 1e-12, "r={r}");
            for n in [16, 17, 512] {
                let grid = Grid::new(n).unwrap();
                let avg = kernel_cell_averages(r, &grid);
                assert!((quadrature(&avg) - 1.0).abs() < 1e-12, "r={r} n={n}");
            }
        }
        // independent check by brute-force quadrature of the point kernel
        for r in [0.1, 0.5, 2.0] {
            let q = gauss_legendre(|t| constant_rate_kernel(r, t), -0.5, 0.5, 4000);
            assert!((q - 1.0).abs() < 1e-6, "r={r} q={q}");
        }
    }

    #[test]
    fn cell_weights_match_brute_force() {
        let grid = Grid::new(20).unwrap();
        let r = 0.3;
        let w = kernel_cell_weights(r, &grid);
        for (k, wk) in w.iter().enumerate() {
            let a = (k as f64 - 0.5) / 20.0;
            let b = (k as f64 + 0.5) / 20.0;
            // split at 0 and 1/2 where the kernel has kinks
            let mut pts = vec![a, b];
            for kink in [0.0, 0.5] {
                if kink > a && kink < b {
                    pts.insert(1, kink);
                }
            }
            pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let brute: f64 = pts
                .windows(2)
                .map(|p| gauss_legendre(|t| constant_rate_kernel(r, t), p[0], p[1], 200))
                .sum();
            assert!((wk - brute).abs() < 1e-12, "k={k}: {wk} vs {brute}");
        }
    }

    #[test]
    fn constant_rate_uniform_stays_uniform() {
        let grid = Grid::new(64).unwrap();
        let ell = PreferenceDistribution::uniform(&grid);
        let s = solve_constant_rate(&ell, 0.7).unwrap();
        assert!(s.sup_distance(&vec![1.0; 64]) < 1e-12);
    }

    #[test]
    fn constant_rate_limits() {
        let ell = gaussian(512, 0.5, 0.1);
        let s = solve_constant_rate(&ell, 1e-3).unwrap();
        assert!(s.sup_distance(ell.density()) < 0.05 * ell.max());

        let grid = Grid::new(512).unwrap();
        let ell = PreferenceDistribution::new(
            &PreferenceKind::Block {
                lo: 0.4,
                hi: 0.6,
                height: 5.0,
            },
            &grid,
        )
        .unwrap();
        let s = solve_constant_rate(&ell, 100.0).unwrap();
        assert!(s.shares().iter().all(|v| (v - 1.0).abs() < 0.05));
        assert!((s.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn better_set_examples() {
        let n = 64;
        let flat = vec![1.0; n];
        let bs = BetterSet::new(&flat);
        // own type: nothing better
        let x = (10.0 + 0.5) / n as f64;
        assert_eq!(bs.measure(x, x), 0.0);
        // distance 0.1 with constant rates: arc of length 0.2
        assert!((bs.measure(0.3, 0.4) - 0.2).abs() < 1e-12);
        assert!((bs.measure(0.95, 0.05) - 0.2).abs() < 1e-12);
        // antipode: everything
        assert!((bs.measure(0.25, 0.75) - 1.0).abs() < 1e-12);
        assert!((destruction_rate(0.3, 0.4, &vec![2.0; n], 0.5) - (0.5 + 2.0 * 0.2)).abs() < 1e-12);
        assert!((destruction_rate(0.2, 0.2, &vec![2.0; n], 0.5) - 0.5).abs() < 1e-12);
        assert!((destruction_rate(0.1, 0.6, &vec![2.0; n], 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn unmatched_examples() {
        let ell = gaussian(32, 0.5, 0.2);
        let u = unmatched_profile(&ell, &FrictionParams::new(1.0, 4.0, 1.0, 0.0).unwrap());
        for (a, b) in u.iter().zip(ell.density()) {
            assert!((a - b / 5.0).abs() < 1e-15);
        }
        let u = unmatched_profile(&ell, &FrictionParams::new(1e9, 1.0, 1.0, 0.0).unwrap());
        assert!(sup_distance(&u, ell.density()) < 1e-8);
        let u = unmatched_profile(&ell, &FrictionParams::new(1.0, 1e9, 1.0, 0.0).unwrap());
        assert!(u.iter().all(|v| *v < 1e-8));
    }

    #[test]
    fn match_density_mass_and_balance() {
        let ell = gaussian(128, 0.4, 0.15);
        let fr = FrictionParams::new(0.6, 2.0, 1.5, 0.0).unwrap();
        let lam = vec![fr.lambda_tot; 128];
        let h = match_density(&ell, &lam, &fr).unwrap();
        let m = fr.k * fr.lambda_tot / (fr.k * fr.lambda_tot + fr.mu);
        assert!((h.total_mass() - m).abs() < 1e-6, "{} vs {m}", h.total_mass());
        let u = unmatched_profile(&ell, &fr);
        for (x, (&ux, &lx)) in u.iter().zip(ell.density()).enumerate() {
            // matched plus unmatched mass recovers the type mass
            let tm = h.type_mass(x);
            assert!(tm <= lx + 1e-9);
            assert!((tm + ux - lx).abs() < 1e-3 * ell.max());
        }
        // shares from h equal the convolution route
        let s = solve_constant_rate(&ell, fr.r_f()).unwrap();
        assert!(s.sup_distance(&h.shares()) < 1e-9);
    }

    #[test]
    fn match_density_flow_balance_pointwise() {
        // pointwise h(x, y) with constant rates; the worse-set integral is
        // done by brute-force quadrature
        let (mu, lam, k) = (0.7, 1.3, 2.0);
        let fr = FrictionParams::new(mu, lam, k, 0.0).unwrap();
        let ell_x = 1.7;
        let u = ell_x * fr.unmatched_fraction();
        let c = u * k * (mu + lam);
        let g = |d: f64| mu + lam * 2.0 * d;
        let h = |d: f64| c * lam / (g(d) * g(d));
        for d in [0.0, 0.03, 0.1, 0.25, 0.49] {
            let worse = 2.0 * gauss_legendre(h, d, 0.5, 400);
            let lhs = h(d) * g(d);
            let rhs = k * lam * u + lam * worse;
            assert!((lhs - rhs).abs() < 1e-8, "d={d}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn shares_are_k_invariant() {
        let ell = gaussian(64, 0.3, 0.1);
        let lam: Vec<f64> = (0..64).map(|i| 1.0 + 0.5 * ((i as f64) / 10.0).sin()).collect();
        let tot = quadrature(&lam);
        let base = {
            let fr = FrictionParams::new(0.4, tot, 1.0, 0.0).unwrap();
            match_density(&ell, &lam, &fr).unwrap().shares()
        };
        for k in [0.5, 2.0] {
            let fr = FrictionParams::new(0.4, tot, k, 0.0).unwrap();
            let s = match_density(&ell, &lam, &fr).unwrap().shares();
            assert!(sup_distance(&s, &base) < 1e-10);
        }
    }

    #[test]
    fn fixed_point_alpha_zero_is_convolution() {
        for (ell, r) in [(gaussian(128, 0.5, 0.1), 1.0), (block(128, 0.25, 0.75), 0.2)] {
            let fr = FrictionParams::from_rf(r, 0.0).unwrap();
            let fp = solve_fixed_point(&ell, &fr, &SolveOptions::default()).unwrap();
            let conv = solve_constant_rate(&ell, r).unwrap();
            assert!(fp.profile.sup_distance(conv.shares()) < 1e-9);
        }
    }

    #[test]
    fn fixed_point_converges_and_reports() {
        let ell = block(128, 0.25, 0.75);
        let fr = FrictionParams::from_rf(1.0, 0.8).unwrap();
        let sol = solve_fixed_point(&ell, &fr, &SolveOptions::default()).unwrap();
        assert!(sol.report.residual < 10.0 * 1e-10);
        assert!((sol.profile.mass() - 1.0).abs() < 1e-9);
        assert!((sol.report.map_mass - 1.0).abs() < 1e-3);
        assert!(sol.profile.shares().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn accelerated_solve_agrees_with_plain() {
        let ell = gaussian(128, 0.5, 0.12);
        for (r, a) in [(0.3, 0.9), (2.0, 0.6), (0.05, 0.0)] {
            let fr = FrictionParams::from_rf(r, a).unwrap();
            let plain = solve_fixed_point(&ell, &fr, &SolveOptions::default()).unwrap();
            let fast = solve_fixed_point(&ell, &fr, &SolveOptions::accelerated()).unwrap();
            assert!(fast.report.iterations <= plain.report.iterations);
            assert!(fast.report.residual < 1e-9);
            assert!(fast.profile.sup_distance(plain.profile.shares()) < 1e-7);
        }
        let bad = SolveOptions {
            acceleration: 51,
            ..SolveOptions::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fixed_point_errors() {
        let ell = block(64, 0.25, 0.75);
        let fr = FrictionParams::from_rf(1.0, 1.0).unwrap();
        assert!(solve_fixed_point(&ell, &fr, &SolveOptions::default()).is_err());
        let fr = FrictionParams::from_rf(1.0, 0.9).unwrap();
        let opts = SolveOptions {
            max_iterations: 2,
            ..SolveOptions::default()
        };
        match solve_fixed_point(&ell, &fr, &opts) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn stats_examples() {
        let grid = Grid::new(32).unwrap();
        let flat = ShareProfile::new(grid.clone(), vec![1.0; 32]).unwrap();
        let st = profile_stats(&flat);
        assert_eq!(st.variance, 0.0);
        assert_eq!((st.max, st.min), (1.0, 1.0));

        let ell = block(256, 0.4, 0.6);
        for r in [0.05, 0.5, 3.0] {
            let s = solve_constant_rate(&ell, r).unwrap();
            let st = profile_stats(&s);
            assert!(st.variance <= ell.variance());
            assert!(st.max <= ell.max() + 1e-12);
            assert!(st.min >= ell.min() - 1e-12);
        }
    }

    #[test]
    fn median_examples() {
        let ell = gaussian(512, 0.5, 0.1);
        let m = median_point(&ell).unwrap();
        assert!((m.y_star - 0.5).abs() < 1e-9);

        let ell = block(512, 0.25, 0.75);
        assert!((median_point(&ell).unwrap().y_star - 0.5).abs() < 1e-9);

        let grid = Grid::new(512).unwrap();
        let uniform = PreferenceDistribution::uniform(&grid);
        assert!(matches!(median_point(&uniform), Err(Error::Degenerate(_))));

        // asymmetric double peak: the median sits between the peaks, away
        // from the tallest one
        let dp = PreferenceDistribution::new(
            &PreferenceKind::DoublePeak {
                c1: 0.3,
                sd1: 0.04,
                c2: 0.6,
                sd2: 0.08,
                weight: 0.45,
            },
            &grid,
        )
        .unwrap();
        let m = median_point(&dp).unwrap();
        let mode = grid.point(dp.argmax());
        assert!(m.y_star > 0.3 && m.y_star < 0.6, "{m:?}");
        assert!((m.y_star - mode).abs() > 0.05);
        // oracle: the arc [y*, y* + 1/2] carries half the mass
        let arc: f64 = (0..512)
            .filter(|i| {
                let off = (grid.point(*i) - m.y_star).rem_euclid(1.0);
                off < 0.5
            })
            .map(|i| dp.density()[i])
            .sum::<f64>()
            / 512.0;
        assert!((arc - 0.5).abs() < 2.0 * dp.max() / 512.0);
    }
}
