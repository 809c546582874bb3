//! Matching efficiency as a function of the meeting-rate slope, the
//! utility of a single agent deviating from the population's slope, and
//! the resulting best responses.
//!
//! Both quantities are reported without the common positive prefactor, so
//! only comparisons within a fixed `(ell, r_f, sigma)` are meaningful.

use rayon::prelude::*;
use serde::Serialize;

use crate::continuum::{meeting_weights, solve_fixed_point, QuarterTable, SolveOptions, ALPHA_CAP};
use crate::error::{Error, Result};
use crate::market::{FrictionParams, PreferenceDistribution, ShareProfile, SurplusFunction};

/// Relative tolerance under which two utilities count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `points` evenly spaced values on `[0, cap]`.
pub fn alpha_grid(points: usize, cap: f64) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::invalid("alpha grid needs at least two points"));
    }
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(Error::invalid("alpha cap must lie in (0, 1]"));
    }
    Ok((0..points).map(|k| cap * k as f64 / (points - 1) as f64).collect())
}

/// Default grid: 41 points on `[0, 0.999]`.
pub fn default_alpha_grid() -> Vec<f64> {
    alpha_grid(41, ALPHA_CAP).expect("static grid")
}

fn check_grid(alphas: &[f64], cap: f64) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    if alphas.iter().any(|a| !(0.0..=cap).contains(a)) {
        return Err(Error::invalid(format!("alpha grid values must lie in [0, {cap}]")));
    }
    Ok(())
}

/// `∫_0^1 (s0 + (s1 - s0) t) / (a + (b - a) t)^2 dt` for `a, b > 0`.
fn linear_over_square(s0: f64, s1: f64, a: f64, b: f64) -> f64 {
    let c = b - a;
    let u = c / a;
    // ∫ t / (a + c t)^2
    let first_moment = if u.abs() < 1e-3 {
        (0.5 - u * (2.0 / 3.0 - u * (0.75 - u * 0.8))) / (a * a)
    } else {
        ((b / a).ln() - c / b) / (c * c)
    };
    s0 / (a * b) + (s1 - s0) * first_moment
}

/// `∫∫ ell(x) w(y) sigma(x, y) / (r + B_w(x, y))^2 dx dy`, where `B_w` is the
/// better-set measure under weights `w`. Inside each quarter cell `B_w` is
/// linear and `sigma` is interpolated linearly (exact for linear `f`).
pub fn weighted_surplus(ell: &PreferenceDistribution, weights: &[f64], r_f: f64, sf: &SurplusFunction) -> f64 {
    let grid = ell.grid();
    let n = grid.len();
    let dens = ell.density();
    let quarters = QuarterTable::new(weights);
    let len = 0.25 / n as f64;
    let sigma = |q: usize, y: f64| sf.value_at_distance(crate::market::circular_distance(q as f64 * len, y));
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let better = quarters.row(i);
            let y = grid.point(i);
            let mut acc = 0.0;
            let mut b_prev = r_f + better(0);
            let mut s_prev = sigma(0, y);
            for (j, l) in dens.iter().enumerate() {
                let mut cell = 0.0;
                for q in 4 * j + 1..=4 * j + 4 {
                    let b = r_f + better(q);
                    let s = sigma(q, y);
                    cell += linear_over_square(s_prev, s, b_prev, b);
                    b_prev = b;
                    s_prev = s;
                }
                acc += l * cell;
            }
            weights[i] * acc * len
        })
        .collect();
    rows.iter().sum::<f64>() / n as f64
}

/// `U_{alpha_tilde}(alpha)` with the population profile `s_{alpha_tilde}` given.
pub fn utility_given_profile(
    alpha: f64,
    population: &ShareProfile,
    ell: &PreferenceDistribution,
    r_f: f64,
    sf: &SurplusFunction,
) -> f64 {
    weighted_surplus(ell, &meeting_weights(alpha, population.shares()), r_f, sf)
}

fn solve_at(alpha: f64, ell: &PreferenceDistribution, r_f: f64, opts: &SolveOptions) -> Result<ShareProfile> {
    let fr = FrictionParams::from_rf(r_f, alpha)?;
    Ok(solve_fixed_point(ell, &fr, opts)?.profile)
}

/// Efficiency `Eff(alpha)` up to the common prefactor.
pub fn efficiency(alpha: f64, ell: &PreferenceDistribution, r_f: f64, sf: &SurplusFunction, opts: &SolveOptions) -> Result<f64> {
    sf.validate()?;
    let s = solve_at(alpha, ell, r_f, opts)?;
    Ok(utility_given_profile(alpha, &s, ell, r_f, sf))
}

/// Utility of an agent using slope `alpha` when everyone else uses
/// `alpha_tilde`.
pub fn agent_utility(
    alpha: f64,
    alpha_tilde: f64,
    ell: &PreferenceDistribution,
    r_f: f64,
    sf: &SurplusFunction,
    opts: &SolveOptions,
) -> Result<f64> {
    sf.validate()?;
    if !(0.0..=opts.alpha_cap).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, {}]", opts.alpha_cap)));
    }
    let s = solve_at(alpha_tilde, ell, r_f, opts)?;
    Ok(utility_given_profile(alpha, &s, ell, r_f, sf))
}

/// Index of the largest value; values within `TIE_TOLERANCE` (relative) of
/// the maximum count as tied and the first one wins.
fn tie_break_argmax(values: &[f64]) -> usize {
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    values.iter().position(|v| *v >= best - tol).unwrap_or(0)
}

/// Grid argmax of `U_{alpha_tilde}(.)`, ties broken toward the smallest alpha.
pub fn best_response(
    alpha_tilde: f64,
    ell: &PreferenceDistribution,
    r_f: f64,
    sf: &SurplusFunction,
    alphas: &[f64],
    opts: &SolveOptions,
) -> Result<f64> {
    check_grid(alphas, opts.alpha_cap)?;
    sf.validate()?;
    let s = solve_at(alpha_tilde, ell, r_f, opts)?;
    let utils: Vec<f64> = alphas.iter().map(|a| utility_given_profile(*a, &s, ell, r_f, sf)).collect();
    Ok(alphas[tie_break_argmax(&utils)])
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyCurve {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax_alpha: f64,
}

impl EfficiencyCurve {
    /// True when the maximizer is neither grid endpoint.
    pub fn interior_argmax(&self) -> bool {
        let first = self.alphas[0];
        let last = self.alphas[self.alphas.len() - 1];
        self.argmax_alpha != first && self.argmax_alpha != last
    }

    /// Relative spread `(max - min) / max` of the curve.
    pub fn relative_range(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min) / max.abs()
    }
}

/// Curves below this relative spread are treated as flat.
pub const FLAT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct StrategicOutcome {
    pub alpha_tilde: Vec<f64>,
    pub best_response: Vec<f64>,
    /// `utility[k][m] = U_{alpha_k}(alpha_m)`.
    pub utility: Vec<Vec<f64>>,
    pub efficiency: EfficiencyCurve,
    pub nash_alpha: Option<f64>,
    /// Members of a best-response cycle when iteration does not settle.
    pub cycle: Vec<f64>,
    pub social_alpha: f64,
    /// `nash - social` when a Nash point exists.
    pub gap: Option<f64>,
    /// Flat efficiency and utility curves, as with uniform preferences.
    pub degenerate: bool,
}

/// Solves every grid slope once and derives efficiency, best responses,
/// the grid Nash point (best-response iteration from the grid point nearest
/// 1/2) and the social optimum.
pub fn nash_and_social(
    ell: &PreferenceDistribution,
    r_f: f64,
    sf: &SurplusFunction,
    alphas: &[f64],
    opts: &SolveOptions,
) -> Result<StrategicOutcome> {
    check_grid(alphas, opts.alpha_cap)?;
    sf.validate()?;
    let profiles: Vec<ShareProfile> = alphas
        .iter()
        .map(|a| {
            log::debug!("solving population profile at alpha = {a}");
            solve_at(*a, ell, r_f, opts)
        })
        .collect::<Result<_>>()?;
    let utility: Vec<Vec<f64>> = profiles
        .iter()
        .map(|s| alphas.iter().map(|a| utility_given_profile(*a, s, ell, r_f, sf)).collect())
        .collect();
    let values: Vec<f64> = (0..alphas.len()).map(|k| utility[k][k]).collect();
    let social_idx = tie_break_argmax(&values);
    let efficiency = EfficiencyCurve {
        alphas: alphas.to_vec(),
        values,
        argmax_alpha: alphas[social_idx],
    };
    let br_idx: Vec<usize> = utility.iter().map(|u| tie_break_argmax(u)).collect();

    let start = (0..alphas.len())
        .min_by(|a, b| {
            (alphas[*a] - 0.5)
                .abs()
                .partial_cmp(&(alphas[*b] - 0.5).abs())
                .expect("finite grid")
        })
        .expect("nonempty grid");
    let mut visited = vec![start];
    let (nash_alpha, cycle) = loop {
        let cur = *visited.last().expect("nonempty");
        let next = br_idx[cur];
        if next == cur {
            break (Some(alphas[cur]), Vec::new());
        }
        if let Some(pos) = visited.iter().position(|v| *v == next) {
            break (None, visited[pos..].iter().map(|k| alphas[*k]).collect());
        }
        visited.push(next);
    };

    let degenerate = efficiency.relative_range() < FLAT_TOLERANCE
        && utility.iter().all(|u| {
            let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
            (max - min) <= FLAT_TOLERANCE * max.abs()
        });
    let social_alpha = efficiency.argmax_alpha;
    Ok(StrategicOutcome {
        alpha_tilde: alphas.to_vec(),
        best_response: br_idx.iter().map(|k| alphas[*k]).collect(),
        utility,
        gap: nash_alpha.map(|n| n - social_alpha),
        nash_alpha,
        cycle,
        social_alpha,
        efficiency,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::solve_constant_rate;
    use crate::market::{circular_distance, Grid, PreferenceKind};

    fn gaussian(n: usize, sd: f64) -> PreferenceDistribution {
        PreferenceDistribution::new(&PreferenceKind::WrappedGaussian { center: 0.5, sd }, &Grid::new(n).unwrap()).unwrap()
    }

    /// Brute-force midpoint oracle for the surplus-weighted integral with
    /// constant meeting rates, where `B = 2 d(x, y)` exactly.
    fn constant_rate_oracle(ell: &PreferenceDistribution, r: f64, sub: usize) -> f64 {
        let grid = ell.grid();
        let n = grid.len();
        let m = n * sub;
        let mut acc = 0.0;
        for i in 0..n {
            let y = grid.point(i);
            for k in 0..m {
                let x = (k as f64 + 0.5) / m as f64;
                let d = circular_distance(x, y);
                acc += ell.density()[k / sub] * (1.0 - d) / ((r + 2.0 * d) * (r + 2.0 * d));
            }
        }
        acc / (n * m) as f64
    }

    #[test]
    fn piece_integral_matches_quadrature() {
        for (s0, s1, a, b) in [
            (1.0, 0.9, 0.2, 0.2004),
            (0.7, 0.8, 0.001, 0.005),
            (1.0, 1.0, 0.3, 1.2),
            (0.5, 0.6, 2.0, 0.1),
        ] {
            let m = 200_000;
            let brute: f64 = (0..m)
                .map(|k| {
                    let t = (k as f64 + 0.5) / m as f64;
                    (s0 + (s1 - s0) * t) / ((a + (b - a) * t) * (a + (b - a) * t))
                })
                .sum::<f64>()
                / m as f64;
            let exact = linear_over_square(s0, s1, a, b);
            assert!((exact - brute).abs() < 1e-7 * brute, "{exact} vs {brute}");
        }
    }

    #[test]
    fn constant_rate_matches_brute_force() {
        let ell = gaussian(64, 0.15);
        let r = 0.5;
        let ours = weighted_surplus(&ell, &vec![1.0; 64], r, &SurplusFunction::default());
        let oracle = constant_rate_oracle(&ell, r, 400);
        assert!((ours - oracle).abs() < 1e-6 * oracle, "{ours} vs {oracle}");
    }

    /// Samples `x` and `y'` independently of the quarter-cell scheme and
    /// counts the better set directly.
    fn weighted_oracle(ell: &PreferenceDistribution, w: &[f64], r: f64, xs: usize, ys: usize) -> f64 {
        let grid = ell.grid();
        let n = grid.len();
        let mut acc = 0.0;
        for i in 0..n {
            let y = grid.point(i);
            for k in 0..xs {
                let x = (k as f64 + 0.5) / xs as f64;
                let d = circular_distance(x, y);
                let better: f64 = (0..ys)
                    .filter(|q| circular_distance(x, (*q as f64 + 0.5) / ys as f64) < d)
                    .map(|q| w[q * n / ys])
                    .sum::<f64>()
                    / ys as f64;
                let l = ell.density()[k * n / xs];
                acc += l * w[i] * (1.0 - d) / ((r + better) * (r + better));
            }
        }
        acc / (n * xs) as f64
    }

    #[test]
    fn weighted_surplus_matches_direct_sampling() {
        let n = 16;
        let ell = gaussian(n, 0.15);
        let w: Vec<f64> = (0..n).map(|i| 0.4 + 1.2 * ((i * 7) % n) as f64 / n as f64).collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let w: Vec<f64> = w.iter().map(|v| v / mean).collect();
        for r in [0.2, 1.0] {
            let ours = weighted_surplus(&ell, &w, r, &SurplusFunction::default());
            let oracle = weighted_oracle(&ell, &w, r, 1600, 3200);
            assert!((ours - oracle).abs() < 2e-3 * oracle, "r {r}: {ours} vs {oracle}");
        }
    }

    #[test]
    fn utility_at_own_alpha_is_efficiency() {
        let ell = gaussian(64, 0.1);
        let sf = SurplusFunction::default();
        let opts = SolveOptions::default();
        for a in [0.0, 0.4, 0.9] {
            let e = efficiency(a, &ell, 0.3, &sf, &opts).unwrap();
            let u = agent_utility(a, a, &ell, 0.3, &sf, &opts).unwrap();
            assert!((e - u).abs() <= 1e-9 * e.abs());
        }
    }

    #[test]
    fn uniform_preferences_are_flat() {
        let grid = Grid::new(32).unwrap();
        let ell = PreferenceDistribution::uniform(&grid);
        let sf = SurplusFunction::default();
        let alphas = alpha_grid(5, ALPHA_CAP).unwrap();
        let out = nash_and_social(&ell, 0.4, &sf, &alphas, &SolveOptions::default()).unwrap();
        assert!(out.degenerate);
        assert!(out.efficiency.relative_range() < 1e-9);
        // flat curves resolve to the smallest alpha
        assert!(out.best_response.iter().all(|b| *b == 0.0));
        assert_eq!(out.social_alpha, 0.0);
        let br = best_response(0.5, &ell, 0.4, &sf, &alphas, &SolveOptions::default()).unwrap();
        assert_eq!(br, 0.0);
    }

    #[test]
    fn frictionless_efficiency_is_flat_in_alpha() {
        let ell = gaussian(128, 0.1);
        let sf = SurplusFunction::default();
        let opts = SolveOptions::default();
        let r = 1e-3;
        let e: Vec<f64> = [0.0, 0.5, 0.9]
            .iter()
            .map(|a| efficiency(*a, &ell, r, &sf, &opts).unwrap() * r)
            .collect();
        // scaled by r the limit is finite; differences vanish with r
        let spread = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - e.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.02 * e[0], "{e:?}");
    }

    #[test]
    fn scaling_surplus_keeps_argmaxes() {
        let ell = gaussian(48, 0.12);
        let alphas = alpha_grid(6, ALPHA_CAP).unwrap();
        let opts = SolveOptions::default();
        let base = nash_and_social(&ell, 0.3, &SurplusFunction::default(), &alphas, &opts).unwrap();
        let scaled = nash_and_social(&ell, 0.3, &SurplusFunction::default().scaled(3.5), &alphas, &opts).unwrap();
        assert_eq!(base.best_response, scaled.best_response);
        assert_eq!(base.social_alpha, scaled.social_alpha);
        assert_eq!(base.nash_alpha, scaled.nash_alpha);
    }

    #[test]
    fn alpha_zero_weights_reproduce_convolution_mass() {
        // with unit weights and sigma = 1 the inner integral is the
        // convolution share up to the r (r + 1) factor
        let ell = gaussian(64, 0.2);
        let r = 0.7;
        let flat = SurplusFunction::Linear {
            intercept: 1.0,
            slope: 0.0,
        };
        let v = weighted_surplus(&ell, &vec![1.0; 64], r, &flat) * r * (r + 1.0);
        let s = solve_constant_rate(&ell, r).unwrap();
        assert!((v - s.mass()).abs() < 1e-6);
    }

    #[test]
    fn grid_checks() {
        assert!(alpha_grid(1, 0.9).is_err());
        assert_eq!(default_alpha_grid().len(), 41);
        assert_eq!(*default_alpha_grid().last().unwrap(), ALPHA_CAP);
        let ell = gaussian(32, 0.1);
        let r = best_response(0.5, &ell, 0.3, &SurplusFunction::default(), &[], &SolveOptions::default());
        assert!(r.is_err());
        let r = best_response(0.5, &ell, 0.3, &SurplusFunction::default(), &[1.0], &SolveOptions::default());
        assert!(r.is_err());
    }
}
