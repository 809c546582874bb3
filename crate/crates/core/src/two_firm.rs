//! Two firms, two agent types.
//!
//! Agents of type `a` prefer firm A, type `b` prefer firm B. The market is
//! summarized by `p_a`, the fraction of type-`a` agents, and the friction
//! parameters. Rates are expressed with `lambda_tot = 1`, so `mu = r_f`,
//! whenever only the share matters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::FrictionParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoFirmMarket {
    pub p_a: f64,
    pub frictions: FrictionParams,
}

impl TwoFirmMarket {
    pub fn new(p_a: f64, frictions: FrictionParams) -> Result<Self> {
        check_p(p_a)?;
        frictions.validate()?;
        Ok(TwoFirmMarket { p_a, frictions })
    }
}

/// Stocks of the two-firm steady state. `h_xy` is the mass of type-`x`
/// agents matched with firm `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoFirmSteadyState {
    pub u_a: f64,
    pub u_b: f64,
    pub h_a_a: f64,
    pub h_a_b: f64,
    pub h_b_a: f64,
    pub h_b_b: f64,
    pub s_a: f64,
    pub s_b: f64,
    pub matched: f64,
}

impl TwoFirmSteadyState {
    pub fn total_mass(&self) -> f64 {
        self.u_a + self.u_b + self.h_a_a + self.h_a_b + self.h_b_a + self.h_b_b
    }
}

fn check_p(p_a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_a) {
        return Err(Error::invalid(format!("p_a must lie in [0, 1], got {p_a}")));
    }
    Ok(())
}

fn check_rf(r_f: f64) -> Result<()> {
    if !(r_f >= 0.0) || !r_f.is_finite() {
        return Err(Error::invalid(format!("r_f must be finite and nonnegative, got {r_f}")));
    }
    Ok(())
}

/// Solves the flow-balance equations of the two-firm market for given
/// meeting rates `lambda_a + lambda_b = lambda_tot`.
///
/// Unmatched agents meet firms at `K` times the matched rate; with `K = 1`
/// the matched mass is `lambda_tot / (mu + lambda_tot)`.
pub fn steady_state(market: &TwoFirmMarket, lambda_a: f64, lambda_b: f64) -> Result<TwoFirmSteadyState> {
    let fr = &market.frictions;
    if !(lambda_a >= 0.0 && lambda_b >= 0.0) {
        return Err(Error::invalid("meeting rates must be nonnegative"));
    }
    let total = lambda_a + lambda_b;
    if !(total > 0.0) {
        return Err(Error::invalid("total meeting rate must be positive"));
    }
    if ((total - fr.lambda_tot) / fr.lambda_tot).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "lambda_a + lambda_b = {total} differs from lambda_tot = {}",
            fr.lambda_tot
        )));
    }
    let (mu, k) = (fr.mu, fr.k);
    let p_a = market.p_a;
    let p_b = 1.0 - p_a;

    let u_a = mu * p_a / (k * total + mu);
    let u_b = mu * p_b / (k * total + mu);
    // type a sits at B until it meets A; type b symmetric
    let h_a_b = k * lambda_b * u_a / (mu + lambda_a);
    let h_a_a = (k * lambda_a * u_a + lambda_a * h_a_b) / mu;
    let h_b_a = k * lambda_a * u_b / (mu + lambda_b);
    let h_b_b = (k * lambda_b * u_b + lambda_b * h_b_a) / mu;

    let matched = h_a_a + h_a_b + h_b_a + h_b_b;
    let s_a = (h_a_a + h_b_a) / matched;
    Ok(TwoFirmSteadyState {
        u_a,
        u_b,
        h_a_a,
        h_a_b,
        h_b_a,
        h_b_b,
        s_a,
        s_b: 1.0 - s_a,
        matched,
    })
}

/// Market share of firm A among matched agents written directly in terms of
/// the meeting rates (the closed form obtained from the flow equations).
pub fn share_from_rates(p_a: f64, mu: f64, lambda_a: f64, lambda_b: f64) -> f64 {
    let tot = lambda_a + lambda_b;
    let entry_term = lambda_a / (mu + lambda_b) * mu / tot;
    let pref_term = lambda_a * lambda_b * (2.0 * mu + tot) / (tot * (mu + lambda_a) * (mu + lambda_b));
    entry_term + p_a * pref_term
}

/// Equal, constant meeting rates.
pub fn share_constant_rate(p_a: f64, r_f: f64) -> Result<f64> {
    check_p(p_a)?;
    check_rf(r_f)?;
    Ok((r_f + p_a) / (1.0 + 2.0 * r_f))
}

/// Meeting rates proportional to market share. Piecewise linear in `p_a`,
/// with winner-takes-all outside the middle branch.
pub fn share_proportional(p_a: f64, r_f: f64) -> Result<f64> {
    check_p(p_a)?;
    check_rf(r_f)?;
    let denom = 2.0 * r_f + 1.0;
    if p_a <= r_f / denom {
        Ok(0.0)
    } else if p_a >= (r_f + 1.0) / denom {
        Ok(1.0)
    } else {
        Ok((p_a * denom - r_f).clamp(0.0, 1.0))
    }
}

/// Friction level above which the less preferred firm vanishes under
/// proportional meeting rates, `p_b / (p_a - p_b)` for `p_a > 1/2`.
pub fn winner_takes_all_threshold(p_a: f64) -> Result<Option<f64>> {
    check_p(p_a)?;
    let p_b = 1.0 - p_a;
    if p_a <= 0.5 {
        return Ok(None);
    }
    Ok(Some(p_b / (p_a - p_b)))
}

/// Meeting rates `((1 - alpha)/2 + alpha s_i) lambda_tot` for share `s` of A.
pub fn affine_rates(alpha: f64, s_a: f64) -> (f64, f64) {
    let base = (1.0 - alpha) / 2.0;
    (base + alpha * s_a, base + alpha * (1.0 - s_a))
}

/// Residual `RHS(s) - s` of the affine-rate equilibrium condition.
pub fn affine_residual(p_a: f64, r_f: f64, alpha: f64, s: f64) -> f64 {
    let (la, lb) = affine_rates(alpha, s);
    if la == 0.0 {
        // firm A is never met: the share equation degenerates to s = 0
        return -s;
    }
    if lb == 0.0 {
        return 1.0 - s;
    }
    share_from_rates(p_a, r_f, la, lb) - s
}

/// Inverse map: the preference share `p_a` that makes `s_a` an equilibrium
/// under affine meeting rates. Undefined at the winner-takes-all corners of
/// the proportional case.
pub fn preference_for_share(s_a: f64, r_f: f64, alpha: f64) -> f64 {
    let (a, b) = affine_rates(alpha, s_a);
    ((r_f + b) * s_a - a * r_f) * (r_f + a) / (a * b * (2.0 * r_f + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    pub share: f64,
    pub stability: Stability,
}

/// All equilibria of the affine model for one `(p_a, r_f, alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineSolution {
    pub p_a: f64,
    pub r_f: f64,
    pub alpha: f64,
    /// Sorted by share.
    pub equilibria: Vec<Equilibrium>,
}

const BRACKET_CELLS: usize = 2000;
const ROOT_TOL: f64 = 1e-13;
const STABILITY_PROBE: f64 = 1e-7;

impl AffineSolution {
    pub fn shares(&self) -> Vec<f64> {
        self.equilibria.iter().map(|e| e.share).collect()
    }

    pub fn stable(&self) -> impl Iterator<Item = &Equilibrium> {
        self.equilibria.iter().filter(|e| e.stability == Stability::Stable)
    }

    /// Equilibrium reached by following the adjustment dynamics `ds/dt = g(s)`
    /// from the frictionless allocation `s = p_a`.
    pub fn selected(&self) -> Equilibrium {
        let g = affine_residual(self.p_a, self.r_f, self.alpha, self.p_a);
        let eq = &self.equilibria;
        let pick = if g > 0.0 {
            eq.iter().find(|e| e.share >= self.p_a - ROOT_TOL)
        } else if g < 0.0 {
            eq.iter().rev().find(|e| e.share <= self.p_a + ROOT_TOL)
        } else {
            eq.iter()
                .min_by(|x, y| (x.share - self.p_a).abs().partial_cmp(&(y.share - self.p_a).abs()).unwrap())
        };
        // the root set always brackets p_a because g(0) >= 0 >= g(1)
        *pick.unwrap_or(&eq[0])
    }
}

/// Finds every equilibrium share in `[0, 1]` under affine meeting rates by
/// sign bracketing on a fine grid plus bisection. Corner equilibria of the
/// proportional case are detected by evaluating the residual at 0 and 1.
pub fn share_affine(p_a: f64, r_f: f64, alpha: f64) -> Result<AffineSolution> {
    check_p(p_a)?;
    check_rf(r_f)?;
    if !(r_f > 0.0) {
        return Err(Error::invalid("affine model needs r_f > 0"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let g = |s: f64| affine_residual(p_a, r_f, alpha, s);

    let mut roots: Vec<f64> = Vec::new();
    if g(0.0).abs() <= ROOT_TOL {
        roots.push(0.0);
    }
    let step = 1.0 / BRACKET_CELLS as f64;
    let mut lo = 0.0;
    let mut g_lo = g(lo);
    for k in 1..=BRACKET_CELLS {
        let hi = if k == BRACKET_CELLS { 1.0 } else { k as f64 * step };
        let g_hi = g(hi);
        if k < BRACKET_CELLS && g_hi == 0.0 {
            roots.push(hi);
        } else if g_lo != 0.0 && g_hi != 0.0 && (g_lo < 0.0) != (g_hi < 0.0) {
            roots.push(bisect(&g, lo, hi, g_lo));
        }
        lo = hi;
        g_lo = g_hi;
    }
    if g(1.0).abs() <= ROOT_TOL {
        roots.push(1.0);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    if roots.is_empty() {
        return Err(Error::RootNotFound(format!(
            "no equilibrium for p_a={p_a}, r_f={r_f}, alpha={alpha}"
        )));
    }

    let equilibria = roots
        .into_iter()
        .map(|s| {
            let below_ok = s <= 0.0 || g((s - STABILITY_PROBE).max(0.0)) > 0.0;
            let above_ok = s >= 1.0 || g((s + STABILITY_PROBE).min(1.0)) < 0.0;
            let stability = if below_ok && above_ok {
                Stability::Stable
            } else {
                Stability::Unstable
            };
            Equilibrium { share: s, stability }
        })
        .collect();
    Ok(AffineSolution {
        p_a,
        r_f,
        alpha,
        equilibria,
    })
}

fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, g_lo: f64) -> f64 {
    let lo_negative = g_lo < 0.0;
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Friction level at and above which frictions can only homogenize shares:
/// `(alpha - 1/2) / (1 - alpha)` for `alpha >= 1/2`, `None` below.
pub fn homogenizing_threshold(alpha: f64) -> Result<Option<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("threshold defined for alpha in [0, 1), got {alpha}")));
    }
    if alpha < 0.5 {
        return Ok(None);
    }
    Ok(Some((alpha - 0.5) / (1.0 - alpha)))
}

/// Slope at `s = 1/2` of the cubic numerator of `p_a(s) - s`, divided by
/// `lambda_tot^3`. Its sign decides whether frictions can favour the
/// preferred firm.
pub fn homogenizing_slope(alpha: f64, r_f: f64) -> f64 {
    r_f * r_f - alpha * r_f * r_f - alpha * r_f + r_f / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogenizingReport {
    pub alpha: f64,
    pub r_f: f64,
    pub threshold: Option<f64>,
    /// `max (s_a - p_a)` over stable equilibria and `p_a >= 1/2`.
    pub max_excess: f64,
    pub argmax_p_a: f64,
    pub predicted_homogenizing: bool,
    pub observed_homogenizing: bool,
    pub slope_sign_agrees: bool,
}

impl HomogenizingReport {
    pub fn consistent(&self) -> bool {
        self.predicted_homogenizing == self.observed_homogenizing && self.slope_sign_agrees
    }
}

pub const EXCESS_TOLERANCE: f64 = 1e-9;

/// Checks the homogenizing threshold against direct root solves on a grid
/// of preference shares (values below 1/2 are ignored).
pub fn verify_homogenizing(alpha: f64, r_f: f64, p_grid: &[f64]) -> Result<HomogenizingReport> {
    let threshold = homogenizing_threshold(alpha)?;
    if !(r_f > 0.0) {
        return Err(Error::invalid("r_f must be positive"));
    }
    let mut max_excess = f64::NEG_INFINITY;
    let mut argmax_p_a = 0.5;
    for &p in p_grid.iter().filter(|p| **p >= 0.5 && **p <= 1.0) {
        let sol = share_affine(p, r_f, alpha)?;
        for eq in sol.stable() {
            let excess = eq.share - p;
            if excess > max_excess {
                max_excess = excess;
                argmax_p_a = p;
            }
        }
    }
    if !max_excess.is_finite() {
        return Err(Error::invalid("preference grid has no point in [1/2, 1]"));
    }
    let predicted = threshold.is_none_or(|t| r_f >= t);
    Ok(HomogenizingReport {
        alpha,
        r_f,
        threshold,
        max_excess,
        argmax_p_a,
        predicted_homogenizing: predicted,
        observed_homogenizing: max_excess <= EXCESS_TOLERANCE,
        slope_sign_agrees: (homogenizing_slope(alpha, r_f) >= 0.0) == predicted,
    })
}

/// Evenly spaced preference shares on `[1/2, 1]`.
pub fn upper_half_grid(points: usize) -> Vec<f64> {
    let m = points.max(2) - 1;
    (0..=m).map(|i| 0.5 + 0.5 * i as f64 / m as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market(p_a: f64, mu: f64) -> TwoFirmMarket {
        TwoFirmMarket::new(p_a, FrictionParams::new(mu, 1.0, 1.0, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_rates_give_half() {
        let ss = steady_state(&market(0.5, 0.8), 0.5, 0.5).unwrap();
        assert!((ss.s_a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn steady_state_matches_closed_forms() {
        let ss = steady_state(&market(0.7, 1.0), 0.5, 0.5).unwrap();
        assert!((ss.s_a - 1.7 / 3.0).abs() < 1e-14);
        assert!((ss.s_a - share_constant_rate(0.7, 1.0).unwrap()).abs() < 1e-14);
        assert!((ss.s_a - share_from_rates(0.7, 1.0, 0.5, 0.5)).abs() < 1e-14);
        assert!((ss.total_mass() - 1.0).abs() < 1e-14);
        assert!((ss.matched - 0.5).abs() < 1e-14);
    }

    #[test]
    fn steady_state_share_is_k_invariant() {
        let base = steady_state(&market(0.3, 0.4), 0.7, 0.3).unwrap();
        for k in [0.25, 2.0, 10.0] {
            let m = TwoFirmMarket::new(0.3, FrictionParams::new(0.4, 1.0, k, 0.0).unwrap()).unwrap();
            let ss = steady_state(&m, 0.7, 0.3).unwrap();
            assert!((ss.s_a - base.s_a).abs() < 1e-13);
            assert!((ss.matched - k / (k + 0.4)).abs() < 1e-13);
            assert!((ss.total_mass() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn frictionless_limit() {
        for p in [0.1, 0.35, 0.8] {
            let ss = steady_state(&market(p, 1e-9), 0.3, 0.7).unwrap();
            assert!((ss.s_a - p).abs() < 1e-6);
        }
    }

    #[test]
    fn steady_state_errors() {
        let m = market(0.5, 1.0);
        assert!(steady_state(&m, 0.0, 0.0).is_err());
        assert!(steady_state(&m, 0.2, 0.2).is_err());
        assert!(steady_state(&m, -0.1, 1.1).is_err());
    }

    #[test]
    fn constant_rate_examples() {
        assert_eq!(share_constant_rate(0.3, 0.0).unwrap(), 0.3);
        assert!((share_constant_rate(0.9, 1e9).unwrap() - 0.5).abs() < 1e-8);
        assert!((share_constant_rate(0.7, 1.0).unwrap() - 0.566_666_666_666_666_6).abs() < 1e-15);
        assert!(share_constant_rate(1.2, 1.0).is_err());
        assert!(share_constant_rate(0.5, -1.0).is_err());
    }

    #[test]
    fn proportional_examples() {
        for r in [0.0, 0.3, 2.0, 50.0] {
            assert_eq!(share_proportional(0.5, r).unwrap(), 0.5);
        }
        assert_eq!(share_proportional(0.75, 0.5).unwrap(), 1.0);
        assert_eq!(share_proportional(0.75, 3.0).unwrap(), 1.0);
        assert!((share_proportional(0.6, 0.25).unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(share_proportional(0.2, 1.0).unwrap(), 0.0);
        assert_eq!(winner_takes_all_threshold(0.75).unwrap(), Some(0.5));
        assert_eq!(winner_takes_all_threshold(0.5).unwrap(), None);
    }

    #[test]
    fn affine_reduces_to_constant_rate() {
        for &(p, r) in &[(0.2, 0.3), (0.7, 1.0), (0.95, 4.0)] {
            let sol = share_affine(p, r, 0.0).unwrap();
            assert_eq!(sol.equilibria.len(), 1);
            let expect = share_constant_rate(p, r).unwrap();
            assert!((sol.equilibria[0].share - expect).abs() < 1e-10);
            assert_eq!(sol.equilibria[0].stability, Stability::Stable);
        }
    }

    #[test]
    fn affine_contains_proportional() {
        for &(p, r) in &[(0.6, 0.25), (0.75, 0.5), (0.9, 5.0), (0.3, 0.1), (0.2, 1.0)] {
            let sol = share_affine(p, r, 1.0).unwrap();
            let expect = share_proportional(p, r).unwrap();
            assert!(
                sol.equilibria.iter().any(|e| (e.share - expect).abs() < 1e-10),
                "p={p} r={r} roots={:?}",
                sol.shares()
            );
            // the flow from the frictionless allocation lands on it
            assert!((sol.selected().share - expect).abs() < 1e-10);
            assert_eq!(sol.selected().stability, Stability::Stable);
        }
    }

    #[test]
    fn affine_fig3_point() {
        let sol = share_affine(0.7, 0.7, 0.85).unwrap();
        let sel = sol.selected();
        assert_eq!(sel.stability, Stability::Stable);
        assert!(sel.share > 0.7, "{sel:?}");
        // the inverse map recovers p_a from every interior root
        for e in &sol.equilibria {
            assert!((preference_for_share(e.share, 0.7, 0.85) - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(homogenizing_threshold(0.0).unwrap(), None);
        assert_eq!(homogenizing_threshold(0.3).unwrap(), None);
        assert_eq!(homogenizing_threshold(0.5).unwrap(), Some(0.0));
        assert!((homogenizing_threshold(0.75).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!(homogenizing_threshold(1.0).is_err());
        // the slope changes sign exactly at the threshold
        let t = homogenizing_threshold(0.8).unwrap().unwrap();
        assert!(homogenizing_slope(0.8, t).abs() < 1e-12);
        assert!(homogenizing_slope(0.8, t * 0.9) < 0.0);
        assert!(homogenizing_slope(0.8, t * 1.1) > 0.0);
    }

    #[test]
    fn homogenizing_examples() {
        let grid = upper_half_grid(401);
        let r = verify_homogenizing(0.85, 0.7, &grid).unwrap();
        assert!(!r.observed_homogenizing && r.max_excess > 0.0);
        assert!(r.consistent());
        let r = verify_homogenizing(0.3, 2.0, &grid).unwrap();
        assert!(r.observed_homogenizing && r.consistent());
        let r = verify_homogenizing(0.3, 0.05, &grid).unwrap();
        assert!(r.observed_homogenizing && r.consistent());
        let r = verify_homogenizing(0.85, 5.0, &grid).unwrap();
        assert!(r.observed_homogenizing && r.consistent());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symmetry_all_modes(p in 0.0f64..1.0, r in 0.01f64..5.0, alpha in 0.0f64..1.0) {
                let c = share_constant_rate(p, r).unwrap() + share_constant_rate(1.0 - p, r).unwrap();
                prop_assert!((c - 1.0).abs() < 1e-10);
                let q = share_proportional(p, r).unwrap() + share_proportional(1.0 - p, r).unwrap();
                prop_assert!((q - 1.0).abs() < 1e-10);
                let a = share_affine(p, r, alpha).unwrap().selected().share;
                let b = share_affine(1.0 - p, r, alpha).unwrap().selected().share;
                prop_assert!((a + b - 1.0).abs() < 1e-10, "{} + {}", a, b);
            }

            #[test]
            fn constant_rate_slope(p in 0.0f64..0.99, r in 0.0f64..10.0) {
                let dp = 0.01;
                let slope = (share_constant_rate(p + dp, r).unwrap() - share_constant_rate(p, r).unwrap()) / dp;
                prop_assert!((slope - 1.0 / (1.0 + 2.0 * r)).abs() < 1e-9);
                if p > 0.5 && r > 0.0 {
                    prop_assert!(share_constant_rate(p, r).unwrap() < p);
                }
            }

            #[test]
            fn mass_conservation(p in 0.0f64..1.0, mu in 0.01f64..10.0, la in 0.0f64..1.0, k in 0.1f64..10.0) {
                let m = TwoFirmMarket::new(p, FrictionParams::new(mu, 1.0, k, 0.0).unwrap()).unwrap();
                let ss = steady_state(&m, la, 1.0 - la).unwrap();
                prop_assert!((ss.total_mass() - 1.0).abs() < 1e-12);
                prop_assert!(ss.u_a >= 0.0 && ss.h_a_b >= 0.0 && ss.h_b_a >= 0.0);
                prop_assert!((ss.s_a - share_from_rates(p, mu, la, 1.0 - la)).abs() < 1e-12);
            }

            #[test]
            fn frictionless_limit_all_modes(p in 0.0f64..1.0, alpha in 0.0f64..1.0) {
                let r = 1e-6;
                prop_assert!((share_constant_rate(p, r).unwrap() - p).abs() < 1e-4);
                prop_assert!((share_proportional(p, r).unwrap() - p).abs() < 1e-4);
                let s = share_affine(p, r, alpha).unwrap().selected().share;
                prop_assert!((s - p).abs() < 1e-4, "s={} p={}", s, p);
            }
        }
    }
}
