use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::ingest::{FlowPanel, IngestStats};
use crate::error::{Error, Result};

/// Which firm share the inflow shares are regressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Regressor {
    /// End-of-year share, the same year as the inflows.
    #[default]
    Current,
    /// Share at the end of the previous year.
    Lagged,
}

impl std::str::FromStr for Regressor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Regressor::Current),
            "lagged" => Ok(Regressor::Lagged),
            _ => Err(Error::invalid(format!("unknown regressor {s:?} (current | lagged)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scope {
    /// One regression per market, free intercept, pooled over its years.
    PerMarket,
    /// All markets and years, demeaned within market-year.
    PooledFe,
    /// One regression per year, demeaned within market.
    PerYear,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-market" => Ok(Scope::PerMarket),
            "pooled" | "pooled-fe" => Ok(Scope::PooledFe),
            "per-year" => Ok(Scope::PerYear),
            _ => Err(Error::invalid(format!(
                "unknown scope {s:?} (per-market | pooled-fe | per-year)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateOptions {
    /// Fraction of poached inflows that come from panel firms, in (0, 1].
    pub beta1: f64,
    pub regressor: Regressor,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            beta1: 1.0,
            regressor: Regressor::Current,
        }
    }
}

impl EstimateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 <= 1.0) {
            return Err(Error::invalid(format!("beta1 must lie in (0, 1], got {}", self.beta1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedCell {
    pub market_id: String,
    pub year: i32,
    pub firm_id: String,
    pub buyers: u64,
    pub share: f64,
    pub lagged_share: f64,
    pub n_firms: usize,
    /// Inflow from the unmatched pool after removing out-of-panel origins.
    pub f_hat: f64,
    pub clipped: bool,
    /// `f_hat` over its market-year total.
    pub inflow_share: f64,
}

impl AdjustedCell {
    fn regressor(&self, r: Regressor) -> f64 {
        match r {
            Regressor::Current => self.share,
            Regressor::Lagged => self.lagged_share,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjustedPanel {
    pub beta1: f64,
    pub cells: Vec<AdjustedCell>,
    pub clipped_cells: usize,
    pub total_cells: usize,
    /// Market-years dropped because every adjusted inflow was zero.
    pub empty_market_years: Vec<(String, i32)>,
}

impl AdjustedPanel {
    pub fn clipped_share(&self) -> f64 {
        if self.total_cells == 0 {
            0.0
        } else {
            self.clipped_cells as f64 / self.total_cells as f64
        }
    }
}

/// Subtracts the out-of-panel share of new inflows,
/// `f_hat = new - (1 - beta1) / beta1 * poached`, clips at zero and
/// renormalizes within each market-year.
pub fn adjust_flows(panel: &FlowPanel, beta1: f64) -> Result<AdjustedPanel> {
    if !(beta1 > 0.0 && beta1 <= 1.0) {
        return Err(Error::invalid(format!("beta1 must lie in (0, 1], got {beta1}")));
    }
    let factor = (1.0 - beta1) / beta1;
    let mut groups: BTreeMap<(&str, i32), Vec<AdjustedCell>> = BTreeMap::new();
    let mut clipped_cells = 0;
    for c in &panel.cells {
        let raw = c.new_inflow as f64 - factor * c.poached_inflow as f64;
        let clipped = raw < 0.0;
        clipped_cells += clipped as usize;
        groups.entry((c.market_id.as_str(), c.year)).or_default().push(AdjustedCell {
            market_id: c.market_id.clone(),
            year: c.year,
            firm_id: c.firm_id.clone(),
            buyers: c.buyers,
            share: c.share,
            lagged_share: c.lagged_share,
            n_firms: c.n_firms,
            f_hat: raw.max(0.0),
            clipped,
            inflow_share: 0.0,
        });
    }
    let mut cells = Vec::with_capacity(panel.cells.len());
    let mut empty = Vec::new();
    for ((market, year), mut group) in groups {
        let total: f64 = group.iter().map(|c| c.f_hat).sum();
        if total <= 0.0 {
            log::info!("market {market} year {year} has no adjusted inflow, excluded");
            empty.push((market.to_string(), year));
            continue;
        }
        for c in &mut group {
            c.inflow_share = c.f_hat / total;
        }
        cells.extend(group);
    }
    Ok(AdjustedPanel {
        beta1,
        cells,
        clipped_cells,
        total_cells: panel.cells.len(),
        empty_market_years: empty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaEstimate {
    pub scope: Scope,
    /// Market id, year, or `"pooled"`.
    pub key: String,
    /// Slope with free intercepts.
    pub alpha_hat: f64,
    /// Heteroskedasticity-robust (HC1) standard error.
    pub se: f64,
    pub n: usize,
    /// Slope with the intercept pinned to `(1 - alpha) / N`.
    pub constrained_alpha: f64,
    pub constrained_se: f64,
    /// Buyers behind the observations, for weighting.
    pub buyers: u64,
    pub clipped_share: f64,
}

struct Fit {
    slope: f64,
    se: f64,
}

/// OLS slope after demeaning within each group, with HC1 errors counting
/// one intercept per group.
fn within_fit(groups: &[Vec<(f64, f64)>]) -> Option<Fit> {
    let mut pts = Vec::new();
    for g in groups {
        if g.is_empty() {
            continue;
        }
        let m = g.len() as f64;
        let mx = g.iter().map(|p| p.0).sum::<f64>() / m;
        let my = g.iter().map(|p| p.1).sum::<f64>() / m;
        pts.extend(g.iter().map(|&(x, y)| (x - mx, y - my)));
    }
    let k = groups.iter().filter(|g| !g.is_empty()).count() + 1;
    origin_fit(&pts, k)
}

fn origin_fit(pts: &[(f64, f64)], k: usize) -> Option<Fit> {
    let n = pts.len();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    // regressors are shares, so an absolute floor separates rounding noise
    if n <= k || !(sxx > 1e-14 * n as f64) {
        return None;
    }
    let slope = pts.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx;
    let meat: f64 = pts
        .iter()
        .map(|&(x, y)| {
            let e = y - slope * x;
            x * x * e * e
        })
        .sum();
    let var = meat / (sxx * sxx) * n as f64 / (n - k) as f64;
    Some(Fit { slope, se: var.sqrt() })
}

fn estimate_cells(
    scope: Scope,
    key: String,
    cells: &[&AdjustedCell],
    regressor: Regressor,
    demean_by_market_year: bool,
) -> Option<AlphaEstimate> {
    let mut groups: BTreeMap<(&str, i32), Vec<(f64, f64)>> = BTreeMap::new();
    for c in cells {
        let g = if demean_by_market_year {
            (c.market_id.as_str(), c.year)
        } else {
            ("", 0)
        };
        groups.entry(g).or_default().push((c.regressor(regressor), c.inflow_share));
    }
    let groups: Vec<_> = groups.into_values().collect();
    let free = within_fit(&groups)?;
    let centered: Vec<(f64, f64)> = cells
        .iter()
        .map(|c| {
            let base = 1.0 / c.n_firms as f64;
            (c.regressor(regressor) - base, c.inflow_share - base)
        })
        .collect();
    let constrained = origin_fit(&centered, 1)?;
    Some(AlphaEstimate {
        scope,
        key,
        alpha_hat: free.slope,
        se: free.se,
        n: cells.len(),
        constrained_alpha: constrained.slope,
        constrained_se: constrained.se,
        buyers: cells.iter().map(|c| c.buyers).sum(),
        clipped_share: cells.iter().filter(|c| c.clipped).count() as f64 / cells.len() as f64,
    })
}

/// Estimates for one scope. Groups whose regressor has no variance are
/// skipped with a warning; if nothing is left the result is `Degenerate`.
pub fn estimate_scope(adjusted: &AdjustedPanel, scope: Scope, regressor: Regressor) -> Result<Vec<AlphaEstimate>> {
    let mut by_key: BTreeMap<String, Vec<&AdjustedCell>> = BTreeMap::new();
    let mut year_keys: BTreeMap<i32, Vec<&AdjustedCell>> = BTreeMap::new();
    for c in &adjusted.cells {
        match scope {
            Scope::PerMarket => by_key.entry(c.market_id.clone()).or_default().push(c),
            Scope::PooledFe => by_key.entry("pooled".into()).or_default().push(c),
            Scope::PerYear => year_keys.entry(c.year).or_default().push(c),
        }
    }
    // years sort numerically, not as strings
    let groups: Vec<(String, Vec<&AdjustedCell>)> = if scope == Scope::PerYear {
        year_keys.into_iter().map(|(y, v)| (y.to_string(), v)).collect()
    } else {
        by_key.into_iter().collect()
    };
    let demean = scope != Scope::PerMarket;
    let fits: Vec<(String, Option<AlphaEstimate>)> = groups
        .into_par_iter()
        .map(|(key, cells)| {
            let est = estimate_cells(scope, key.clone(), &cells, regressor, demean);
            (key, est)
        })
        .collect();
    let mut out = Vec::new();
    for (key, est) in fits {
        match est {
            Some(e) => out.push(e),
            None => log::warn!("{scope:?} {key}: regressor has no variance or too few observations, skipped"),
        }
    }
    if out.is_empty() {
        return Err(Error::Degenerate(format!("no estimable {scope:?} group")));
    }
    Ok(out)
}

/// Adjusts flows and estimates one scope.
pub fn estimate_alpha(panel: &FlowPanel, scope: Scope, opts: &EstimateOptions) -> Result<Vec<AlphaEstimate>> {
    opts.validate()?;
    estimate_scope(&adjust_flows(panel, opts.beta1)?, scope, opts.regressor)
}

/// Per-year series, pooled across markets with market fixed effects.
pub fn alpha_by_year(panel: &FlowPanel, opts: &EstimateOptions) -> Result<Vec<AlphaEstimate>> {
    estimate_alpha(panel, Scope::PerYear, opts)
}

/// Mean inflow share per quantile bin of the regressor:
/// `(mean regressor, mean inflow share, count)`.
pub fn binned_inflow_means(adjusted: &AdjustedPanel, regressor: Regressor, bins: usize) -> Vec<(f64, f64, usize)> {
    let mut pts: Vec<(f64, f64)> = adjusted
        .cells
        .iter()
        .map(|c| (c.regressor(regressor), c.inflow_share))
        .collect();
    if pts.is_empty() || bins == 0 {
        return Vec::new();
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bins = bins.min(pts.len());
    (0..bins)
        .map(|b| {
            let chunk = &pts[b * pts.len() / bins..(b + 1) * pts.len() / bins];
            let m = chunk.len() as f64;
            (
                chunk.iter().map(|p| p.0).sum::<f64>() / m,
                chunk.iter().map(|p| p.1).sum::<f64>() / m,
                chunk.len(),
            )
        })
        .collect()
}

/// All scopes plus diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaReport {
    pub options: EstimateOptions,
    pub per_market: Vec<AlphaEstimate>,
    /// Unweighted mean of per-market slopes and its standard error across
    /// markets.
    pub mean_alpha: f64,
    pub mean_alpha_se: f64,
    pub buyer_weighted_mean_alpha: f64,
    pub pooled: AlphaEstimate,
    pub by_year: Vec<AlphaEstimate>,
    pub clipped_share: f64,
    pub clipped_cells: usize,
    pub empty_market_years: Vec<(String, i32)>,
    pub ingest: IngestStats,
}

impl AlphaReport {
    pub fn compute(panel: &FlowPanel, opts: &EstimateOptions) -> Result<Self> {
        opts.validate()?;
        let adjusted = adjust_flows(panel, opts.beta1)?;
        let per_market = estimate_scope(&adjusted, Scope::PerMarket, opts.regressor)?;
        let pooled = estimate_scope(&adjusted, Scope::PooledFe, opts.regressor)?.remove(0);
        let by_year = estimate_scope(&adjusted, Scope::PerYear, opts.regressor)?;
        let slopes: Vec<f64> = per_market.iter().map(|e| e.alpha_hat).collect();
        let (mean_alpha, mean_alpha_se) = crate::simulate::mean_se(&slopes);
        let total_buyers: f64 = per_market.iter().map(|e| e.buyers as f64).sum();
        let buyer_weighted_mean_alpha = per_market.iter().map(|e| e.alpha_hat * e.buyers as f64).sum::<f64>() / total_buyers;
        Ok(AlphaReport {
            options: *opts,
            per_market,
            mean_alpha,
            mean_alpha_se,
            buyer_weighted_mean_alpha,
            pooled,
            by_year,
            clipped_share: adjusted.clipped_share(),
            clipped_cells: adjusted.clipped_cells,
            empty_market_years: adjusted.empty_market_years,
            ingest: panel.stats.clone(),
        })
    }

    /// Writes `alpha_by_market.csv`, `alpha_by_year.csv` and
    /// `diagnostics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_estimates(&dir.join("alpha_by_market.csv"), "market_id", &self.per_market)?;
        write_estimates(&dir.join("alpha_by_year.csv"), "year", &self.by_year)?;
        let diag = serde_json::json!({
            "beta1": self.options.beta1,
            "regressor": self.options.regressor,
            "mean_alpha": self.mean_alpha,
            "mean_alpha_se": self.mean_alpha_se,
            "buyer_weighted_mean_alpha": self.buyer_weighted_mean_alpha,
            "pooled": self.pooled,
            "clipped_share": self.clipped_share,
            "clipped_cells": self.clipped_cells,
            "empty_market_years": self.empty_market_years,
            "dropped_buyer_years": self.ingest.dropped_buyer_years,
            "kept_buyer_years": self.ingest.kept_buyer_years,
            "dropped_firm_years": self.ingest.dropped_firm_years,
            "merged_rows": self.ingest.merged_rows,
            "excluded_market_years": self.ingest.excluded_market_years,
        });
        fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&diag)?)?;
        Ok(())
    }
}

fn write_estimates(path: &Path, key_name: &str, rows: &[AlphaEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([key_name, "alpha_hat", "se", "n", "constrained_alpha", "constrained_se"])?;
    for e in rows {
        w.write_record([
            e.key.clone(),
            e.alpha_hat.to_string(),
            e.se.to_string(),
            e.n.to_string(),
            e.constrained_alpha.to_string(),
            e.constrained_se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::ingest::FlowCell;

    #[allow(clippy::too_many_arguments)]
    fn cell(market: &str, year: i32, firm: usize, share: f64, lagged: f64, new: u64, poached: u64, n: usize) -> FlowCell {
        FlowCell {
            market_id: market.into(),
            year,
            firm_id: format!("f{firm}"),
            buyers: (share * 1000.0) as u64,
            share,
            lagged_share: lagged,
            new_inflow: new,
            poached_inflow: poached,
            n_firms: n,
        }
    }

    fn panel(cells: Vec<FlowCell>) -> FlowPanel {
        FlowPanel {
            cells,
            stats: IngestStats::default(),
        }
    }

    #[test]
    fn adjustment_examples() {
        let p = panel(vec![
            cell("m", 1, 0, 0.5, 0.5, 100, 10, 2),
            cell("m", 1, 1, 0.5, 0.5, 5, 10, 2),
        ]);
        let a = adjust_flows(&p, 0.15).unwrap();
        assert!((a.cells[0].f_hat - (100.0 - 0.85 / 0.15 * 10.0)).abs() < 1e-12);
        assert!((a.cells[0].f_hat - 43.333333333333).abs() < 1e-9);
        assert_eq!(a.cells[1].f_hat, 0.0);
        assert!(a.cells[1].clipped);
        assert_eq!(a.clipped_cells, 1);
        assert_eq!(a.cells[0].inflow_share, 1.0);

        let a = adjust_flows(&p, 1.0).unwrap();
        assert_eq!((a.cells[0].f_hat, a.cells[1].f_hat), (100.0, 5.0));
        assert_eq!(a.clipped_cells, 0);
        let s: f64 = a.cells.iter().map(|c| c.inflow_share).sum();
        assert!((s - 1.0).abs() < 1e-15);

        assert!(adjust_flows(&p, 0.0).is_err());
        assert!(adjust_flows(&p, 1.5).is_err());
    }

    fn shares(m: usize, j: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..j).map(|k| 1.0 + ((k * 7 + m * 3) % 5) as f64).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|v| v / t).collect()
    }

    fn identity_panel(alpha: f64, lagged_regressor: bool) -> FlowPanel {
        let mut cells = Vec::new();
        for m in 0..4 {
            for year in 1..4 {
                let j = 3 + m;
                let s = shares(m + year as usize, j);
                let lag = shares(m + year as usize + 1, j);
                for k in 0..j {
                    let base = if lagged_regressor { lag[k] } else { s[k] };
                    let inflow = (1.0 - alpha) / j as f64 + alpha * base;
                    cells.push(cell(
                        &format!("m{m}"),
                        year,
                        k,
                        s[k],
                        lag[k],
                        (inflow * 1e6).round() as u64,
                        0,
                        j,
                    ));
                }
            }
        }
        panel(cells)
    }

    #[test]
    fn flat_and_identity_panels() {
        let opts = EstimateOptions::default();
        for scope in [Scope::PerMarket, Scope::PooledFe, Scope::PerYear] {
            for e in estimate_alpha(&identity_panel(0.0, false), scope, &opts).unwrap() {
                assert!(e.alpha_hat.abs() < 1e-5, "{e:?}");
                assert!(e.constrained_alpha.abs() < 1e-5);
            }
            for e in estimate_alpha(&identity_panel(1.0, false), scope, &opts).unwrap() {
                assert!((e.alpha_hat - 1.0).abs() < 1e-5, "{e:?}");
            }
        }
        let lagged = EstimateOptions {
            regressor: Regressor::Lagged,
            ..opts
        };
        let e = estimate_alpha(&identity_panel(1.0, true), Scope::PooledFe, &lagged).unwrap();
        assert!((e[0].alpha_hat - 1.0).abs() < 1e-5);
        assert!(e[0].se >= 0.0 && e[0].se < 1e-5);
        let e = estimate_alpha(&identity_panel(0.4, false), Scope::PooledFe, &opts).unwrap();
        assert!((e[0].alpha_hat - 0.4).abs() < 1e-5);
        assert!((e[0].constrained_alpha - 0.4).abs() < 1e-5);
    }

    #[test]
    fn scope_keys_and_counts() {
        let p = identity_panel(0.5, false);
        let by_year = alpha_by_year(&p, &EstimateOptions::default()).unwrap();
        assert_eq!(by_year.iter().map(|e| e.key.as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);
        assert_eq!(by_year[0].n, 3 + 4 + 5 + 6);
        let per_market = estimate_alpha(&p, Scope::PerMarket, &EstimateOptions::default()).unwrap();
        assert_eq!(per_market.len(), 4);
        let report = AlphaReport::compute(&p, &EstimateOptions::default()).unwrap();
        assert!((report.mean_alpha - 0.5).abs() < 1e-5);
        assert!((report.buyer_weighted_mean_alpha - 0.5).abs() < 1e-5);
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let by_market = std::fs::read_to_string(dir.path().join("alpha_by_market.csv")).unwrap();
        assert!(by_market.starts_with("market_id,alpha_hat,se,n"));
        assert_eq!(by_market.lines().count(), 5);
        assert!(dir.path().join("diagnostics.json").exists());
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let p = panel((0..4).map(|k| cell("m", 1, k, 0.25, 0.25, 10 + k as u64, 0, 4)).collect());
        assert!(matches!(
            estimate_alpha(&p, Scope::PooledFe, &EstimateOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn hc1_matches_direct_formula() {
        // y = 2x + e with one group and free intercept
        let pts = [(0.0, 0.1), (1.0, 1.9), (2.0, 4.2), (3.0, 5.8), (4.0, 8.3)];
        let fit = within_fit(&[pts.to_vec()]).unwrap();
        let mx = 2.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 5.0;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let b = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
        let a = my - b * mx;
        let meat: f64 = pts.iter().map(|p| (p.0 - mx).powi(2) * (p.1 - a - b * p.0).powi(2)).sum();
        let se = (meat / (sxx * sxx) * 5.0 / 3.0).sqrt();
        assert!((fit.slope - b).abs() < 1e-12);
        assert!((fit.se - se).abs() < 1e-12);
    }

    #[test]
    fn binned_means_are_sorted_by_regressor() {
        let a = adjust_flows(&identity_panel(0.7, false), 1.0).unwrap();
        let bins = binned_inflow_means(&a, Regressor::Current, 5);
        assert_eq!(bins.len(), 5);
        assert_eq!(bins.iter().map(|b| b.2).sum::<usize>(), a.cells.len());
        assert!(bins.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }
}
