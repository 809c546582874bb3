//! Continuous-time Monte Carlo of the finite market.
//!
//! Agents enter as a Poisson stream at rate `mu * n_agents`, exit at rate
//! `mu`, and meet firms at total rate `K lambda_tot` while unmatched and
//! `lambda_tot` while matched. Firm `f` receives a fraction
//! `w_f = (1 - alpha) mult_f / Σ mult + alpha matched_f / matched` of all
//! meetings, with matched counts refreshed every `rate_interval`. A matched
//! agent switches only to a strictly closer firm type.
//!
//! Firms either sit at a point or stand for a cell of firm types; meeting a
//! cell firm draws a firm type uniformly within the cell.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{circular_distance, FrictionParams, PreferenceDistribution};

/// A firm, or a block of identical firms, in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Firm {
    /// Firm type, or the start of the cell for cell firms.
    pub position: f64,
    /// Cell width; 0 for a point firm.
    pub width: f64,
    /// Weight in random (size-independent) meetings.
    pub multiplicity: f64,
    /// Whether the firm is observed in a transaction panel.
    pub in_panel: bool,
}

/// How agent types are drawn.
#[derive(Debug, Clone, Serialize)]
pub enum AgentTypes {
    /// Type 0 with probability `p_a`, type 1/2 otherwise.
    TwoPoint { p_a: f64 },
    /// Piecewise-constant density on the grid of `ell`.
    Density(PreferenceDistribution),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimMarket {
    pub firms: Vec<Firm>,
    pub agents: AgentTypes,
}

impl SimMarket {
    /// Firm A at 0 and firm B at 1/2; agents of type A with probability `p_a`.
    pub fn two_firm(p_a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_a) {
            return Err(Error::invalid(format!("p_a must lie in [0, 1], got {p_a}")));
        }
        let point = |position| Firm {
            position,
            width: 0.0,
            multiplicity: 1.0,
            in_panel: true,
        };
        Ok(SimMarket {
            firms: vec![point(0.0), point(0.5)],
            agents: AgentTypes::TwoPoint { p_a },
        })
    }

    /// One cell firm per grid cell of `ell`, agent types drawn from `ell`.
    pub fn continuum(ell: &PreferenceDistribution) -> Self {
        let n = ell.grid().len();
        let h = ell.grid().spacing();
        SimMarket {
            firms: (0..n)
                .map(|i| Firm {
                    position: i as f64 * h,
                    width: h,
                    multiplicity: 1.0,
                    in_panel: true,
                })
                .collect(),
            agents: AgentTypes::Density(ell.clone()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.firms.is_empty() {
            return Err(Error::invalid("market has no firms"));
        }
        for f in &self.firms {
            if !(f.multiplicity > 0.0) || !(0.0..1.0).contains(&f.width) || !f.position.is_finite() {
                return Err(Error::invalid(
                    "firms need positive multiplicity, width in [0, 1) and finite position",
                ));
            }
        }
        if let AgentTypes::TwoPoint { p_a } = self.agents {
            if !(0.0..=1.0).contains(&p_a) {
                return Err(Error::invalid("p_a must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    /// Steady-state population target.
    pub n_agents: usize,
    pub market: SimMarket,
    pub frictions: FrictionParams,
    /// Total simulated time, including burn-in.
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub replications: usize,
    /// Interval between meeting-weight refreshes and statistic samples;
    /// defaults to `0.01 / mu`.
    pub rate_interval: Option<f64>,
    /// Upper bound on expected meetings per agent lifetime.
    pub max_meetings_per_lifetime: f64,
}

impl SimConfig {
    /// Defaults: burn-in `20 / mu`, horizon `60 / mu`, one replication. Shares
    /// relax slowly from the empty start when `alpha` is large, so shorter
    /// burn-ins bias the averages toward the uniform split.
    pub fn new(n_agents: usize, market: SimMarket, frictions: FrictionParams, seed: u64) -> Self {
        SimConfig {
            n_agents,
            market,
            frictions,
            horizon: 60.0 / frictions.mu,
            burn_in: 20.0 / frictions.mu,
            seed,
            replications: 1,
            rate_interval: None,
            max_meetings_per_lifetime: 1e4,
        }
    }

    pub fn rate_interval(&self) -> f64 {
        self.rate_interval.unwrap_or(0.01 / self.frictions.mu)
    }

    /// Expected meetings per lifetime of an agent that never matches or
    /// always is, whichever is larger.
    pub fn meetings_per_lifetime(&self) -> f64 {
        self.frictions.k.max(1.0) * self.frictions.lambda_tot / self.frictions.mu
    }

    pub fn validate(&self) -> Result<()> {
        self.frictions.validate()?;
        self.market.validate()?;
        if self.n_agents < 100 {
            return Err(Error::invalid("n_agents must be at least 100"));
        }
        if !(self.burn_in > 0.0 && self.horizon > self.burn_in) || !self.horizon.is_finite() {
            return Err(Error::invalid("need horizon > burn_in > 0"));
        }
        let dt = self.rate_interval();
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("rate interval must be positive"));
        }
        if self.replications < 1 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        let load = self.meetings_per_lifetime();
        if load > self.max_meetings_per_lifetime {
            return Err(Error::invalid(format!(
                "{load:.3e} expected meetings per lifetime exceeds the cap {:.3e}",
                self.max_meetings_per_lifetime
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub entries: u64,
    pub exits: u64,
    pub meetings: u64,
    pub first_matches: u64,
    pub switches: u64,
}

impl EventCounts {
    fn add(&mut self, o: &EventCounts) {
        self.entries += o.entries;
        self.exits += o.exits;
        self.meetings += o.meetings;
        self.first_matches += o.first_matches;
        self.switches += o.switches;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// Firm types (cell midpoints for cell firms).
    pub centers: Vec<f64>,
    /// Time-averaged share of matched agents at each firm; sums to 1.
    pub shares: Vec<f64>,
    pub share_se: Vec<f64>,
    pub unmatched_fraction: f64,
    pub unmatched_se: f64,
    pub mean_population: f64,
    pub replications: usize,
    pub events: EventCounts,
}

impl SimResult {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Columns `cell_center, share, se`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_center", "share", "se"])?;
        for ((c, s), e) in self.centers.iter().zip(&self.shares).zip(&self.share_se) {
            w.write_record([c.to_string(), s.to_string(), e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and standard error of the mean.
pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Agent {
    id: u64,
    x: f64,
    firm: usize,
    y: f64,
}

/// A matched agent as seen in a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Link {
    pub agent: u64,
    pub agent_type: f64,
    pub firm: usize,
}

/// A link formed by a first match or a switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewLink {
    pub time: f64,
    pub agent: u64,
    pub firm: usize,
    /// Firm left behind; `None` for a first match.
    pub from: Option<usize>,
}

/// Weighted index sampling by binary search over a cumulative table.
#[derive(Debug, Clone, Default)]
struct Cumulative(Vec<f64>);

impl Cumulative {
    fn from_weights<I: IntoIterator<Item = f64>>(weights: I) -> Self {
        let mut acc = 0.0;
        Cumulative(
            weights
                .into_iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect(),
        )
    }

    fn total(&self) -> f64 {
        self.0.last().copied().unwrap_or(0.0)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = rng.gen::<f64>() * self.total();
        self.0.partition_point(|c| *c <= u).min(self.0.len() - 1)
    }
}

#[derive(Debug, Default)]
struct Accumulator {
    samples: u64,
    share_sums: Vec<f64>,
    unmatched_sum: f64,
    population_sum: f64,
    /// Per-batch means for a single-run standard error.
    batch_shares: Vec<Vec<f64>>,
    batch_unmatched: Vec<f64>,
}

/// Single-replication event loop with a stepping interface.
pub struct Simulator {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    time: f64,
    next_tick: f64,
    unmatched: Vec<Agent>,
    matched: Vec<Agent>,
    counts: Vec<u64>,
    random_meetings: Cumulative,
    size_meetings: Cumulative,
    type_table: Option<Cumulative>,
    next_id: u64,
    events: EventCounts,
    acc: Accumulator,
    record: bool,
    link_log: Option<Vec<NewLink>>,
}

const UNMATCHED: usize = usize::MAX;

impl Simulator {
    /// Starts with `n_agents` unmatched agents at time 0.
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let random_meetings = Cumulative::from_weights(cfg.market.firms.iter().map(|f| f.multiplicity));
        let type_table = match &cfg.market.agents {
            AgentTypes::Density(ell) => Some(Cumulative::from_weights(ell.density().iter().copied())),
            AgentTypes::TwoPoint { .. } => None,
        };
        let n_firms = cfg.market.firms.len();
        let mut sim = Simulator {
            next_tick: cfg.rate_interval(),
            rng,
            time: 0.0,
            unmatched: Vec::with_capacity(cfg.n_agents * 2),
            matched: Vec::with_capacity(cfg.n_agents * 2),
            counts: vec![0; n_firms],
            size_meetings: random_meetings.clone(),
            random_meetings,
            type_table,
            next_id: 0,
            events: EventCounts::default(),
            acc: Accumulator {
                share_sums: vec![0.0; n_firms],
                ..Accumulator::default()
            },
            record: true,
            link_log: None,
            cfg,
        };
        for _ in 0..sim.cfg.n_agents {
            let a = sim.new_agent();
            sim.unmatched.push(a);
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn events(&self) -> EventCounts {
        self.events
    }

    /// Changes the meeting-rate slope from now on.
    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        self.cfg.frictions.alpha = alpha;
        Ok(())
    }

    /// Turns time-averaged statistics on or off (they are on by default and
    /// only collected after burn-in).
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    /// Matched agents and their firms, in internal order.
    pub fn snapshot(&self) -> Vec<Link> {
        self.matched
            .iter()
            .map(|a| Link {
                agent: a.id,
                agent_type: a.x,
                firm: a.firm,
            })
            .collect()
    }

    pub fn population(&self) -> usize {
        self.unmatched.len() + self.matched.len()
    }

    /// Starts or stops logging new links. Starting clears the log.
    pub fn set_link_log(&mut self, on: bool) {
        self.link_log = on.then(Vec::new);
    }

    /// Links formed since logging started or since the last call.
    pub fn take_new_links(&mut self) -> Vec<NewLink> {
        self.link_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn matched_counts(&self) -> &[u64] {
        &self.counts
    }

    fn new_agent(&mut self) -> Agent {
        let x = match (&self.cfg.market.agents, &self.type_table) {
            (AgentTypes::TwoPoint { p_a }, _) => {
                if self.rng.gen::<f64>() < *p_a {
                    0.0
                } else {
                    0.5
                }
            }
            (AgentTypes::Density(ell), Some(table)) => {
                let cell = table.sample(&mut self.rng);
                let h = ell.grid().spacing();
                (cell as f64 + self.rng.gen::<f64>()) * h
            }
            _ => unreachable!("density table built at construction"),
        };
        let id = self.next_id;
        self.next_id += 1;
        Agent {
            id,
            x,
            firm: UNMATCHED,
            y: 0.0,
        }
    }

    fn refresh_weights(&mut self) {
        if self.matched.is_empty() {
            self.size_meetings = self.random_meetings.clone();
        } else {
            self.size_meetings = Cumulative::from_weights(self.counts.iter().map(|c| *c as f64));
        }
    }

    fn sample_firm(&mut self) -> (usize, f64) {
        let alpha = self.cfg.frictions.alpha;
        let f = if self.rng.gen::<f64>() < alpha {
            self.size_meetings.sample(&mut self.rng)
        } else {
            self.random_meetings.sample(&mut self.rng)
        };
        let firm = self.cfg.market.firms[f];
        let y = if firm.width > 0.0 {
            firm.position + firm.width * self.rng.gen::<f64>()
        } else {
            firm.position
        };
        (f, y)
    }

    fn sample_stats(&mut self) {
        if !self.record || self.time < self.cfg.burn_in {
            return;
        }
        let m = self.matched.len() as f64;
        let pop = self.population() as f64;
        self.acc.samples += 1;
        if m > 0.0 {
            for (s, c) in self.acc.share_sums.iter_mut().zip(&self.counts) {
                *s += *c as f64 / m;
            }
        }
        let u = if pop > 0.0 { self.unmatched.len() as f64 / pop } else { 0.0 };
        self.acc.unmatched_sum += u;
        self.acc.population_sum += pop;
    }

    fn tick(&mut self) {
        self.sample_stats();
        self.refresh_weights();
    }

    /// Advances the market to time `t_end`.
    pub fn run_until(&mut self, t_end: f64) {
        let fr = self.cfg.frictions;
        let entry_rate = fr.mu * self.cfg.n_agents as f64;
        let dt = self.cfg.rate_interval();
        while self.time < t_end {
            let u = self.unmatched.len() as f64;
            let m = self.matched.len() as f64;
            let exit_rate = fr.mu * (u + m);
            let meet_u = fr.k * fr.lambda_tot * u;
            let meet_m = fr.lambda_tot * m;
            let total = entry_rate + exit_rate + meet_u + meet_m;
            let wait = -(1.0 - self.rng.gen::<f64>()).ln() / total;
            let boundary = self.next_tick.min(t_end);
            if self.time + wait >= boundary {
                // exponential clocks are memoryless: stop at the boundary
                self.time = boundary;
                if boundary == self.next_tick {
                    self.tick();
                    self.next_tick += dt;
                }
                continue;
            }
            self.time += wait;
            let pick = self.rng.gen::<f64>() * total;
            if pick < entry_rate {
                let a = self.new_agent();
                self.unmatched.push(a);
                self.events.entries += 1;
            } else if pick < entry_rate + exit_rate {
                let k = self.rng.gen_range(0..(u + m) as usize);
                if k < self.unmatched.len() {
                    self.unmatched.swap_remove(k);
                } else {
                    let a = self.matched.swap_remove(k - self.unmatched.len());
                    self.counts[a.firm] -= 1;
                }
                self.events.exits += 1;
            } else if pick < entry_rate + exit_rate + meet_u {
                let k = self.rng.gen_range(0..self.unmatched.len());
                let (f, y) = self.sample_firm();
                let mut a = self.unmatched.swap_remove(k);
                a.firm = f;
                a.y = y;
                self.counts[f] += 1;
                if let Some(log) = &mut self.link_log {
                    log.push(NewLink {
                        time: self.time,
                        agent: a.id,
                        firm: f,
                        from: None,
                    });
                }
                self.matched.push(a);
                self.events.meetings += 1;
                self.events.first_matches += 1;
            } else {
                let k = self.rng.gen_range(0..self.matched.len());
                let (f, y) = self.sample_firm();
                self.events.meetings += 1;
                let a = &mut self.matched[k];
                if circular_distance(a.x, y) < circular_distance(a.x, a.y) {
                    if let Some(log) = &mut self.link_log {
                        log.push(NewLink {
                            time: self.time,
                            agent: a.id,
                            firm: f,
                            from: Some(a.firm),
                        });
                    }
                    self.counts[a.firm] -= 1;
                    self.counts[f] += 1;
                    a.firm = f;
                    a.y = y;
                    self.events.switches += 1;
                }
            }
        }
    }

    fn firm_centers(&self) -> Vec<f64> {
        self.cfg.market.firms.iter().map(|f| f.position + 0.5 * f.width).collect()
    }

    /// Runs to the horizon and reports time averages over the post burn-in
    /// samples; standard errors come from ten batch means.
    pub fn finish(mut self) -> SimResult {
        // run in ten equal batches to get batch means
        let batches = 10;
        let span = self.cfg.horizon - self.cfg.burn_in;
        if self.time < self.cfg.burn_in {
            self.run_until(self.cfg.burn_in);
        }
        let n_firms = self.counts.len();
        for b in 1..=batches {
            let before = (self.acc.samples, self.acc.share_sums.clone(), self.acc.unmatched_sum);
            self.run_until(self.cfg.burn_in + span * b as f64 / batches as f64);
            let k = (self.acc.samples - before.0).max(1) as f64;
            self.acc
                .batch_shares
                .push((0..n_firms).map(|i| (self.acc.share_sums[i] - before.1[i]) / k).collect());
            self.acc.batch_unmatched.push((self.acc.unmatched_sum - before.2) / k);
        }
        let samples = self.acc.samples.max(1) as f64;
        let shares: Vec<f64> = self.acc.share_sums.iter().map(|s| s / samples).collect();
        let share_se: Vec<f64> = (0..n_firms)
            .map(|i| {
                let col: Vec<f64> = self.acc.batch_shares.iter().map(|b| b[i]).collect();
                mean_se(&col).1
            })
            .collect();
        SimResult {
            centers: self.firm_centers(),
            shares,
            share_se,
            unmatched_fraction: self.acc.unmatched_sum / samples,
            unmatched_se: mean_se(&self.acc.batch_unmatched).1,
            mean_population: self.acc.population_sum / samples,
            replications: 1,
            events: self.events,
        }
    }
}

/// One replication with the configured seed.
pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    Ok(Simulator::new(config.clone())?.finish())
}

/// Replicated results: the aggregate plus each replication's result.
#[derive(Debug, Clone, Serialize)]
pub struct Replicated {
    pub aggregate: SimResult,
    pub runs: Vec<SimResult>,
}

impl Replicated {
    /// Per-replication share vectors.
    pub fn share_rows(&self) -> Vec<Vec<f64>> {
        self.runs.iter().map(|r| r.shares.clone()).collect()
    }

    /// Shares summed over `bins` equal groups of consecutive firms: mean and
    /// standard error across replications.
    pub fn binned(&self, bins: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.aggregate.shares.len();
        let bins = bins.clamp(1, n);
        let stats: Vec<(f64, f64)> = (0..bins)
            .map(|b| {
                let lo = b * n / bins;
                let hi = (b + 1) * n / bins;
                self.statistic(|r| r.shares[lo..hi].iter().sum())
            })
            .collect();
        (stats.iter().map(|s| s.0).collect(), stats.iter().map(|s| s.1).collect())
    }

    /// Mean and standard error of `stat` across replications.
    pub fn statistic(&self, stat: impl Fn(&SimResult) -> f64) -> (f64, f64) {
        mean_se(&self.runs.iter().map(stat).collect::<Vec<_>>())
    }
}

/// `k` independent replications with seeds `seed + i`, run in parallel and
/// aggregated in replication order. Standard errors are across replications.
pub fn replicate(config: &SimConfig, k: usize) -> Result<Replicated> {
    if k < 2 {
        return Err(Error::invalid("replicate needs at least two replications"));
    }
    config.validate()?;
    let runs: Vec<SimResult> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(i as u64);
            simulate(&cfg)
        })
        .collect::<Result<_>>()?;
    let n_firms = runs[0].shares.len();
    let mut shares = Vec::with_capacity(n_firms);
    let mut share_se = Vec::with_capacity(n_firms);
    for f in 0..n_firms {
        let (m, se) = mean_se(&runs.iter().map(|r| r.shares[f]).collect::<Vec<_>>());
        shares.push(m);
        share_se.push(se);
    }
    let (unmatched_fraction, unmatched_se) = mean_se(&runs.iter().map(|r| r.unmatched_fraction).collect::<Vec<_>>());
    let mut events = EventCounts::default();
    runs.iter().for_each(|r| events.add(&r.events));
    let aggregate = SimResult {
        centers: runs[0].centers.clone(),
        shares,
        share_se,
        unmatched_fraction,
        unmatched_se,
        mean_population: runs.iter().map(|r| r.mean_population).sum::<f64>() / k as f64,
        replications: k,
        events,
    };
    Ok(Replicated { aggregate, runs })
}

/// Writes `<stem>.json` and the per-firm `<stem>.csv` into `dir`.
pub fn write_outputs(result: &SimResult, dir: &Path, stem: &str) -> Result<()> {
    result.write_json(&dir.join(format!("{stem}.json")))?;
    result.write_csv(&dir.join(format!("{stem}.csv")))
}
