use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ingest::TransactionRecord;
use crate::error::{Error, Result};
use crate::market::{FrictionParams, Grid, PreferenceDistribution, PreferenceKind};
use crate::simulate::{AgentTypes, Firm, SimConfig, SimMarket, Simulator};

/// Synthetic transaction panels drawn from the event simulator.
///
/// Each market has `firms_per_market` panel firms evenly spaced on the
/// circle. With `panel_fraction < 1` every panel firm gets an out-of-panel
/// twin at the same location that takes the remaining share of random
/// meetings, so a fraction `panel_fraction` of switchers come from panel
/// firms.
#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    /// Meeting-rate slope per year; a single value applies to every year.
    pub alpha: Vec<f64>,
    pub n_markets: usize,
    pub years: usize,
    pub first_year: i32,
    pub firms_per_market: usize,
    /// Steady-state buyer population per market.
    pub buyers_per_market: usize,
    /// Exit rate per year.
    pub mu: f64,
    /// Meeting rate per year. Each year records end-of-year links only, so
    /// a new buyer who switches before the year ends counts as new at its
    /// second firm; with `lambda` well below one per year that bias is small.
    pub lambda: f64,
    /// Unmatched-to-matched meeting rate ratio.
    pub k: f64,
    /// Buyer preferences; `None` draws a wrapped Gaussian per market with
    /// random center and spread in `sd_range`.
    pub preference: Option<PreferenceKind>,
    pub sd_range: (f64, f64),
    pub panel_fraction: f64,
    /// Transactions below this value are not recorded.
    pub min_transaction_value: Option<f64>,
    /// Burn-in before the first recorded year, in mean lifetimes.
    pub burn_in_lifetimes: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alpha: vec![0.75],
            n_markets: 30,
            years: 6,
            first_year: 2000,
            firms_per_market: 10,
            buyers_per_market: 20_000,
            mu: 0.01,
            lambda: 0.025,
            k: 200.0,
            preference: None,
            sd_range: (0.08, 0.2),
            panel_fraction: 1.0,
            min_transaction_value: None,
            burn_in_lifetimes: 5.0,
            seed: 1,
        }
    }
}

const TYPE_GRID: usize = 64;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || (self.alpha.len() != 1 && self.alpha.len() != self.years) {
            return Err(Error::invalid("alpha needs one value or one per year"));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("alpha values must lie in [0, 1]"));
        }
        if self.n_markets == 0 || self.years == 0 || self.firms_per_market < 2 {
            return Err(Error::invalid("need at least one market, one year and two firms per market"));
        }
        if !(self.panel_fraction > 0.0 && self.panel_fraction <= 1.0) {
            return Err(Error::invalid("panel_fraction must lie in (0, 1]"));
        }
        let (lo, hi) = self.sd_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("sd_range must satisfy 0 < lo <= hi"));
        }
        if !(self.burn_in_lifetimes > 0.0) {
            return Err(Error::invalid("burn_in_lifetimes must be positive"));
        }
        if let Some(v) = self.min_transaction_value {
            if !(v >= 0.0) {
                return Err(Error::invalid("min_transaction_value must be non-negative"));
            }
        }
        FrictionParams::new(self.mu, self.lambda, self.k, self.alpha[0])?;
        Ok(())
    }

    fn alpha_in(&self, year: usize) -> f64 {
        if self.alpha.len() == 1 {
            self.alpha[0]
        } else {
            self.alpha[year]
        }
    }

    fn market(&self, rng: &mut ChaCha8Rng) -> Result<SimMarket> {
        let kind = match &self.preference {
            Some(k) => k.clone(),
            None => PreferenceKind::WrappedGaussian {
                center: rng.gen::<f64>(),
                sd: rng.gen_range(self.sd_range.0..=self.sd_range.1),
            },
        };
        let ell = PreferenceDistribution::new(&kind, &Grid::new(TYPE_GRID)?)?;
        let f = self.firms_per_market;
        let mut firms: Vec<Firm> = (0..f)
            .map(|i| Firm {
                position: (i as f64 + 0.5) / f as f64,
                width: 0.0,
                multiplicity: self.panel_fraction,
                in_panel: true,
            })
            .collect();
        if self.panel_fraction < 1.0 {
            for i in 0..f {
                firms.push(Firm {
                    multiplicity: 1.0 - self.panel_fraction,
                    in_panel: false,
                    ..firms[i]
                });
            }
        }
        Ok(SimMarket {
            firms,
            agents: AgentTypes::Density(ell),
        })
    }
}

fn simulate_market(cfg: &SynthConfig, m: usize) -> Result<Vec<TransactionRecord>> {
    let seed = cfg.seed.wrapping_add(m as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f7_a11e);
    let market = cfg.market(&mut rng)?;
    let frictions = FrictionParams::new(cfg.mu, cfg.lambda, cfg.k, cfg.alpha_in(0))?;
    let burn_in = cfg.burn_in_lifetimes / cfg.mu;
    let mut sim_cfg = SimConfig::new(cfg.buyers_per_market, market, frictions, seed);
    sim_cfg.burn_in = burn_in;
    sim_cfg.horizon = burn_in + cfg.years as f64 + 1.0;
    sim_cfg.rate_interval = Some(0.05);
    let mut sim = Simulator::new(sim_cfg)?;
    sim.set_recording(false);

    let market_id = format!("m{m}");
    let in_panel: Vec<bool> = sim.config().market.firms.iter().map(|f| f.in_panel).collect();
    let (lo, span) = (1e3f64.ln(), 1e3f64.ln());
    let mut out = Vec::new();
    for year in 0..=cfg.years {
        if year > 0 {
            sim.set_alpha(cfg.alpha_in(year - 1))?;
        }
        sim.run_until(burn_in + year as f64);
        // year 0 is the unrecorded base year for lagged states
        let label = cfg.first_year + year as i32 - 1;
        let mut links = sim.snapshot();
        links.sort_unstable_by_key(|l| l.agent);
        for l in links {
            if !in_panel[l.firm] {
                continue;
            }
            let value = (lo + span * rng.gen::<f64>()).exp();
            if cfg.min_transaction_value.is_some_and(|v| value < v) {
                continue;
            }
            out.push(TransactionRecord {
                year: label,
                market_id: market_id.clone(),
                firm_id: format!("{market_id}-f{}", l.firm),
                buyer_id: format!("{market_id}-b{}", l.agent),
                value,
            });
        }
    }
    Ok(out)
}

/// Simulates every market (in parallel) and returns the records in market,
/// year, buyer order. Output depends only on the configuration.
///
/// The panel covers `years + 1` years starting at `first_year - 1`; the
/// first of these only provides lagged states.
pub fn synth_panel(cfg: &SynthConfig) -> Result<Vec<TransactionRecord>> {
    cfg.validate()?;
    let markets: Vec<Result<Vec<TransactionRecord>>> =
        (0..cfg.n_markets).into_par_iter().map(|m| simulate_market(cfg, m)).collect();
    let mut out = Vec::new();
    for m in markets {
        out.extend(m?);
    }
    Ok(out)
}
