use std::fs::File;

use rayon::prelude::*;
use serde_json::json;

use searchmatch::continuum::{
    self, mass_within, median_point, profile_stats, solve_constant_rate, solve_fixed_point, SolveOptions,
};
use searchmatch::efficiency::{efficiency, nash_and_social, utility_given_profile};
use searchmatch::estimation::{
    adjust_flows, binned_inflow_means, ingest_transactions, synth_panel, write_transactions, AlphaReport, EstimateOptions,
    FlowPanel, IngestOptions, Regressor, Scope, SynthConfig,
};
use searchmatch::market::{FrictionParams, PreferenceDistribution, ShareProfile};
use searchmatch::simulate::{replicate, simulate as run_sim, write_outputs, SimConfig, SimMarket};
use searchmatch::two_firm::{homogenizing_threshold, share_affine, share_constant_rate, share_proportional, Stability};
use searchmatch::{Error, Result};

use super::output::{f, Output};
use super::params::{key, parse_preference, KeySpec, Params, SOLVER_KEYS};

pub type Runner = fn(&Params, &mut Output) -> Result<()>;

pub const TWO_FIRM_KEYS: [KeySpec; 4] = [
    key("mode", "affine", "constant | proportional | affine"),
    key("p_a", "0:1:21", "share of agents preferring firm A (list)"),
    key("r_f", "0.5", "friction ratio mu / lambda (list)"),
    key("alpha", "0,0.5,1", "meeting-rate slope, affine mode only (list)"),
];

pub fn two_firm(p: &Params, out: &mut Output) -> Result<()> {
    let mode = p.str("mode");
    let (ps, rs) = (p.list("p_a")?, p.list("r_f")?);
    let alphas = match mode {
        "constant" => vec![0.0],
        "proportional" => vec![1.0],
        "affine" => p.list("alpha")?,
        other => {
            return Err(Error::InvalidInput(format!(
                "mode: expected constant | proportional | affine, got {other:?}"
            )))
        }
    };
    let mut rows = Vec::new();
    for &alpha in &alphas {
        for &r in &rs {
            for &pa in &ps {
                let row = |s: f64, stability: &str, selected: bool| {
                    vec![
                        mode.to_string(),
                        f(alpha),
                        f(r),
                        f(pa),
                        f(s),
                        stability.to_string(),
                        selected.to_string(),
                    ]
                };
                match mode {
                    "constant" => rows.push(row(share_constant_rate(pa, r)?, "stable", true)),
                    "proportional" => rows.push(row(share_proportional(pa, r)?, "stable", true)),
                    _ => {
                        let sol = share_affine(pa, r, alpha)?;
                        let sel = sol.selected();
                        for eq in &sol.equilibria {
                            let st = if eq.stability == Stability::Stable {
                                "stable"
                            } else {
                                "unstable"
                            };
                            rows.push(row(eq.share, st, eq.share == sel.share));
                        }
                    }
                }
            }
        }
    }
    out.csv(
        "two_firm.csv",
        &["mode", "alpha", "r_f", "p_a", "s_a", "stability", "selected"],
        rows,
    )?;
    let thresholds: Vec<_> = alphas
        .iter()
        .map(|a| json!({"alpha": a, "homogenizing_threshold": homogenizing_threshold(*a).ok().flatten()}))
        .collect();
    out.json("summary.json", &json!({ "mode": mode, "thresholds": thresholds }))
}

pub const CONTINUUM_KEYS: [KeySpec; 12] = [
    key(
        "ell",
        "block:0.25,0.75,2",
        "preferences: uniform | block:lo,hi,h | gaussian:c,sd | double:c1,sd1,c2,sd2,w | triangular:lo,mode,hi",
    ),
    key("n", "512", "grid points"),
    key("alpha", "0", "meeting-rate slope"),
    key("r_f", "0.2,1,3,8", "friction ratios (list)"),
    key("k", "1", "unmatched meeting-rate multiplier (does not affect shares)"),
    key("route", "auto", "auto | fixed-point | constant-rate"),
    key("window", "0.05", "half-width for mass near the median point"),
    key("renormalize", "true", "rescale each iterate to unit mass"),
    SOLVER_KEYS[0],
    SOLVER_KEYS[1],
    SOLVER_KEYS[2],
    SOLVER_KEYS[3],
];

/// Either route to the equilibrium profile, plus the iteration report for
/// the fixed-point route.
fn solve_profile(
    ell: &PreferenceDistribution,
    r: f64,
    alpha: f64,
    k: f64,
    route: &str,
    opts: &SolveOptions,
) -> Result<(ShareProfile, Option<continuum::ConvergenceReport>)> {
    let constant = match route {
        "auto" => alpha == 0.0,
        "constant-rate" if alpha == 0.0 => true,
        "constant-rate" => return Err(Error::InvalidInput("route constant-rate needs alpha = 0".into())),
        "fixed-point" => false,
        other => {
            return Err(Error::InvalidInput(format!(
                "route: expected auto | fixed-point | constant-rate, got {other:?}"
            )))
        }
    };
    if constant {
        Ok((solve_constant_rate(ell, r)?, None))
    } else {
        let fr = FrictionParams::new(r, 1.0, k, alpha)?;
        let sol = solve_fixed_point(ell, &fr, opts)?;
        Ok((sol.profile, Some(sol.report)))
    }
}

/// Non-convergence becomes a note and a deferred error so that finished
/// cases are still written.
fn split_failures<T>(results: Vec<(String, Result<T>)>, out: &mut Output) -> Result<(Vec<T>, Option<Error>)> {
    let mut ok = Vec::new();
    let mut deferred = None;
    for (label, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e @ Error::NonConvergence { .. }) => {
                out.note(format!("{label}: {e}; outputs omit this case"));
                deferred.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((ok, deferred))
}

pub fn continuum(p: &Params, out: &mut Output) -> Result<()> {
    let ell = p.distribution("ell", "n")?;
    let alpha = p.f64("alpha")?;
    let k = p.f64("k")?;
    let rs = p.list("r_f")?;
    let route = p.str("route").to_string();
    let window = p.f64("window")?;
    let opts = SolveOptions {
        renormalize: p.bool("renormalize")?,
        ..p.solve_options()?
    };
    type Solved = (f64, ShareProfile, Option<continuum::ConvergenceReport>);
    let solved: Vec<(String, Result<Solved>)> = rs
        .par_iter()
        .map(|&r| {
            (
                format!("r_f = {r}"),
                solve_profile(&ell, r, alpha, k, &route, &opts).map(|(s, rep)| (r, s, rep)),
            )
        })
        .collect();
    let (solved, deferred) = split_failures(solved, out)?;
    let grid = ell.grid();
    let mut profile_rows = Vec::new();
    let mut stat_rows = Vec::new();
    let median = median_point(&ell).ok();
    let mut per_r = Vec::new();
    for (r, s, rep) in &solved {
        for (i, v) in s.shares().iter().enumerate() {
            profile_rows.push(vec![f(*r), f(grid.point(i)), f(ell.density()[i]), f(*v)]);
        }
        let st = profile_stats(s);
        let (iters, resid) = rep.map_or((0, 0.0), |x| (x.iterations, x.residual));
        stat_rows.push(vec![
            f(*r),
            f(st.variance),
            f(st.max),
            f(st.min),
            f(st.argmax),
            iters.to_string(),
            f(resid),
        ]);
        let near_median = median.map(|m| {
            json!({
                "share_at_median": s.shares()[m.cell],
                "mass_within_window": mass_within(s, m.y_star, window),
            })
        });
        per_r.push(json!({ "r_f": r, "stats": st, "convergence": rep, "median": near_median }));
    }
    out.csv("profiles.csv", &["r_f", "y", "ell", "s"], profile_rows)?;
    out.csv(
        "stats.csv",
        &["r_f", "variance", "max", "min", "argmax", "iterations", "residual"],
        stat_rows,
    )?;
    out.json(
        "summary.json",
        &json!({
            "alpha": alpha,
            "grid_points": grid.len(),
            "ell": { "max": ell.max(), "variance": ell.variance(), "argmax": grid.point(ell.argmax()) },
            "median_point": median,
            "profiles": per_r,
        }),
    )?;
    deferred.map_or(Ok(()), Err)
}

pub const EFFICIENCY_KEYS: [KeySpec; 11] = [
    key("ell", "gaussian:0.5,0.1", "preferences (see continuum --keys)"),
    key("n", "256", "grid points"),
    key("r_f", "0.2", "friction ratio"),
    key("alphas", "0:0.999:41", "slope grid (list, at most 0.999)"),
    key(
        "surplus",
        "linear:1,1",
        "match surplus: linear:a,b (a - b d) | exp:a,b (a e^(-b d))",
    ),
    key("strategic", "true", "compute every best response and the Nash point"),
    key(
        "alpha_tilde",
        "",
        "population slopes for utility curves when strategic = false (list)",
    ),
    SOLVER_KEYS[0],
    SOLVER_KEYS[1],
    SOLVER_KEYS[2],
    SOLVER_KEYS[3],
];

pub fn efficiency_cmd(p: &Params, out: &mut Output) -> Result<()> {
    let ell = p.distribution("ell", "n")?;
    let r = p.f64("r_f")?;
    let alphas = p.list("alphas")?;
    let sf = p.surplus("surplus")?;
    let opts = p.solve_options()?;
    if p.bool("strategic")? {
        let o = nash_and_social(&ell, r, &sf, &alphas, &opts)?;
        out.csv(
            "efficiency.csv",
            &["alpha", "efficiency"],
            alphas.iter().zip(&o.efficiency.values).map(|(a, v)| vec![f(*a), f(*v)]),
        )?;
        let mut rows = Vec::new();
        for (k, at) in o.alpha_tilde.iter().enumerate() {
            for (m, a) in alphas.iter().enumerate() {
                rows.push(vec![f(*at), f(*a), f(o.utility[k][m])]);
            }
        }
        out.csv("utility.csv", &["alpha_tilde", "alpha", "utility"], rows)?;
        out.csv(
            "best_response.csv",
            &["alpha_tilde", "best_response"],
            o.alpha_tilde.iter().zip(&o.best_response).map(|(a, b)| vec![f(*a), f(*b)]),
        )?;
        out.json(
            "report.json",
            &json!({
                "r_f": r,
                "argmax_alpha": o.efficiency.argmax_alpha,
                "interior_argmax": o.efficiency.interior_argmax(),
                "relative_range": o.efficiency.relative_range(),
                "nash_alpha": o.nash_alpha,
                "cycle": o.cycle,
                "social_alpha": o.social_alpha,
                "gap": o.gap,
                "degenerate": o.degenerate,
            }),
        )
    } else {
        let values: Vec<f64> = alphas
            .par_iter()
            .map(|a| efficiency(*a, &ell, r, &sf, &opts))
            .collect::<Result<_>>()?;
        out.csv(
            "efficiency.csv",
            &["alpha", "efficiency"],
            alphas.iter().zip(&values).map(|(a, v)| vec![f(*a), f(*v)]),
        )?;
        let tildes = if p.is_set("alpha_tilde") {
            p.list("alpha_tilde")?
        } else {
            Vec::new()
        };
        let mut rows = Vec::new();
        let mut best = Vec::new();
        for at in &tildes {
            let fr = FrictionParams::from_rf(r, *at)?;
            let s = solve_fixed_point(&ell, &fr, &opts)?.profile;
            let utils: Vec<f64> = alphas.iter().map(|a| utility_given_profile(*a, &s, &ell, r, &sf)).collect();
            let top = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            best.push(json!({ "alpha_tilde": at, "best_response": alphas[utils.iter().position(|u| *u == top).unwrap_or(0)] }));
            rows.extend(alphas.iter().zip(&utils).map(|(a, u)| vec![f(*at), f(*a), f(*u)]));
        }
        if !tildes.is_empty() {
            out.csv("utility.csv", &["alpha_tilde", "alpha", "utility"], rows)?;
        }
        let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmax = alphas[values.iter().position(|v| *v == top).unwrap_or(0)];
        out.json(
            "report.json",
            &json!({ "r_f": r, "argmax_alpha": argmax, "best_responses": best }),
        )
    }
}

pub const SIMULATE_KEYS: [KeySpec; 13] = [
    key("market", "two-firm", "two-firm | continuum"),
    key("p_a", "0.7", "two-firm: share of agents preferring A"),
    key("ell", "block:0.25,0.75,2", "continuum: agent preferences"),
    key("n", "64", "continuum: firm cells"),
    key("agents", "50000", "steady-state population"),
    key("alpha", "0", "meeting-rate slope"),
    key("r_f", "1", "friction ratio (meeting rate fixed at 1)"),
    key("k", "1", "unmatched meeting-rate multiplier"),
    key("burn_in", "20", "burn-in in mean lifetimes"),
    key("horizon", "60", "total time in mean lifetimes"),
    key("replications", "1", "independent runs with seeds seed + i"),
    key("rate_interval", "", "weight refresh interval (default 0.01 lifetimes)"),
    key("compare", "true", "also solve the analytic model for comparison"),
];

pub fn simulate(p: &Params, out: &mut Output) -> Result<()> {
    let alpha = p.f64("alpha")?;
    let r = p.f64("r_f")?;
    let fr = FrictionParams::new(r, 1.0, p.f64("k")?, alpha)?;
    let two_firm = match p.str("market") {
        "two-firm" => true,
        "continuum" => false,
        other => {
            return Err(Error::InvalidInput(format!(
                "market: expected two-firm | continuum, got {other:?}"
            )))
        }
    };
    let ell = if two_firm { None } else { Some(p.distribution("ell", "n")?) };
    let market = match &ell {
        None => SimMarket::two_firm(p.f64("p_a")?)?,
        Some(ell) => SimMarket::continuum(ell),
    };
    let mut cfg = SimConfig::new(p.usize("agents")?, market, fr, out.seed());
    cfg.burn_in = p.f64("burn_in")? / fr.mu;
    cfg.horizon = p.f64("horizon")? / fr.mu;
    cfg.rate_interval = p.opt_f64("rate_interval")?;
    let reps = p.usize("replications")?;
    cfg.replications = reps.max(1);
    let result = if reps >= 2 {
        replicate(&cfg, reps)?.aggregate
    } else {
        run_sim(&cfg)?
    };
    write_outputs(&result, out.dir(), "shares")?;
    out.track("shares.json");
    out.track("shares.csv");
    if !p.bool("compare")? {
        return Ok(());
    }
    let z = |sim: f64, se: f64, exact: f64| if se > 0.0 { (sim - exact) / se } else { f64::NAN };
    let u_exact = fr.unmatched_fraction();
    let unmatched = json!({
        "simulated": result.unmatched_fraction, "se": result.unmatched_se, "analytic": u_exact,
        "z": z(result.unmatched_fraction, result.unmatched_se, u_exact),
    });
    match ell {
        None => {
            let exact = share_affine(p.f64("p_a")?, r, alpha)?.selected().share;
            out.json(
                "comparison.json",
                &json!({
                    "share_a": { "simulated": result.shares[0], "se": result.share_se[0], "analytic": exact, "z": z(result.shares[0], result.share_se[0], exact) },
                    "unmatched_fraction": unmatched,
                }),
            )
        }
        Some(ell) => {
            let (s, _) = solve_profile(&ell, r, alpha, 1.0, "auto", &SolveOptions::accelerated())?;
            let n = ell.grid().len() as f64;
            let rows: Vec<Vec<String>> = (0..result.shares.len())
                .map(|i| {
                    let exact = s.shares()[i] / n;
                    vec![
                        f(result.centers[i]),
                        f(result.shares[i]),
                        f(result.share_se[i]),
                        f(exact),
                        f(z(result.shares[i], result.share_se[i], exact)),
                    ]
                })
                .collect();
            let max_z = rows
                .iter()
                .map(|r| r[4].parse::<f64>().unwrap_or(f64::NAN).abs())
                .fold(0.0, f64::max);
            out.csv("comparison.csv", &["cell_center", "simulated", "se", "analytic", "z"], rows)?;
            out.json(
                "comparison.json",
                &json!({ "max_abs_z": max_z, "unmatched_fraction": unmatched }),
            )
        }
    }
}

pub const ESTIMATE_KEYS: [KeySpec; 6] = [
    key("input", "", "transaction CSV"),
    key("beta1", "1", "share of poached inflows from panel firms, in (0, 1]"),
    key("beta1_grid", "0.1:1:10", "sensitivity grid for beta1 (list)"),
    key("regressor", "current", "current | lagged firm share"),
    key("min_firm_value", "", "drop firm-years below this annual value"),
    key("bins", "10", "quantile bins for the linearity table"),
];

fn estimation_outputs(panel: &FlowPanel, opts: &EstimateOptions, grid: &[f64], bins: usize, out: &mut Output) -> Result<()> {
    let report = AlphaReport::compute(panel, opts)?;
    report.write(out.dir())?;
    for name in ["alpha_by_market.csv", "alpha_by_year.csv", "diagnostics.json"] {
        out.track(name);
    }
    let mut rows = Vec::new();
    for &b in grid {
        let o = EstimateOptions { beta1: b, ..*opts };
        match searchmatch::estimation::estimate_alpha(panel, Scope::PooledFe, &o) {
            Ok(e) => rows.push(vec![f(b), f(e[0].alpha_hat), f(e[0].se), f(e[0].clipped_share)]),
            Err(e) => out.note(format!("beta1 = {b}: {e}")),
        }
    }
    out.csv("beta1_sensitivity.csv", &["beta1", "alpha_hat", "se", "clipped_share"], rows)?;
    let adjusted = adjust_flows(panel, opts.beta1)?;
    let lin = binned_inflow_means(&adjusted, opts.regressor, bins);
    out.csv(
        "linearity.csv",
        &["mean_share", "mean_inflow_share", "count"],
        lin.iter().map(|(x, y, c)| vec![f(*x), f(*y), c.to_string()]),
    )?;
    println!(
        "alpha_hat: per-market mean {:.4} (se {:.4}), pooled {:.4} (se {:.4})",
        report.mean_alpha, report.mean_alpha_se, report.pooled.alpha_hat, report.pooled.se
    );
    Ok(())
}

pub fn estimate(p: &Params, out: &mut Output) -> Result<()> {
    if !p.is_set("input") {
        return Err(Error::InvalidInput("estimate needs an input CSV".into()));
    }
    let ingest = IngestOptions {
        min_firm_value: p.opt_f64("min_firm_value")?,
    };
    let panel = ingest_transactions(File::open(p.str("input"))?, &ingest)?;
    let opts = EstimateOptions {
        beta1: p.f64("beta1")?,
        regressor: p.str("regressor").parse::<Regressor>()?,
    };
    estimation_outputs(&panel, &opts, &p.list("beta1_grid")?, p.usize("bins")?, out)
}

pub const SYNTH_KEYS: [KeySpec; 17] = [
    key("alpha", "0.75", "true slope: one value or one per year (list)"),
    key("markets", "30", "number of markets"),
    key("years", "6", "recorded years"),
    key("first_year", "2000", "label of the first recorded year"),
    key("firms", "10", "panel firms per market"),
    key("buyers", "20000", "buyers per market"),
    key("mu", "0.01", "buyer exit rate per year"),
    key("lambda", "0.025", "meeting rate per year"),
    key("k", "200", "unmatched meeting-rate multiplier"),
    key(
        "panel_fraction",
        "1",
        "random-meeting weight of panel firms; the rest goes to unobserved twins",
    ),
    key(
        "ell",
        "",
        "preferences for every market (default: random Gaussian per market)",
    ),
    key("sd_min", "0.08", "smallest random preference spread"),
    key("sd_max", "0.2", "largest random preference spread"),
    key("min_value", "", "drop transactions below this value"),
    key("burn_in", "5", "burn-in in mean lifetimes"),
    key("estimate", "false", "also estimate the slope from the generated panel"),
    key("bins", "10", "quantile bins for the linearity table"),
];

pub fn synth_panel_cmd(p: &Params, out: &mut Output) -> Result<()> {
    let cfg = SynthConfig {
        alpha: p.list("alpha")?,
        n_markets: p.usize("markets")?,
        years: p.usize("years")?,
        first_year: p.i32("first_year")?,
        firms_per_market: p.usize("firms")?,
        buyers_per_market: p.usize("buyers")?,
        mu: p.f64("mu")?,
        lambda: p.f64("lambda")?,
        k: p.f64("k")?,
        preference: if p.is_set("ell") {
            Some(parse_preference(p.str("ell")).map_err(Error::InvalidInput)?)
        } else {
            None
        },
        sd_range: (p.f64("sd_min")?, p.f64("sd_max")?),
        panel_fraction: p.f64("panel_fraction")?,
        min_transaction_value: p.opt_f64("min_value")?,
        burn_in_lifetimes: p.f64("burn_in")?,
        seed: out.seed(),
    };
    let records = synth_panel(&cfg)?;
    write_transactions(File::create(out.dir().join("transactions.csv"))?, &records)?;
    out.track("transactions.csv");
    let truth: Vec<Vec<String>> = (0..cfg.years)
        .map(|y| {
            vec![
                (cfg.first_year + y as i32).to_string(),
                f(if cfg.alpha.len() == 1 { cfg.alpha[0] } else { cfg.alpha[y] }),
            ]
        })
        .collect();
    out.csv("truth.csv", &["year", "alpha_true"], truth)?;
    if p.bool("estimate")? {
        let panel = searchmatch::estimation::ingest_records(&records, &IngestOptions::default())?;
        let opts = EstimateOptions {
            beta1: cfg.panel_fraction,
            regressor: Regressor::Current,
        };
        estimation_outputs(&panel, &opts, &[cfg.panel_fraction], p.usize("bins")?, out)?;
    }
    Ok(())
}

pub const SWEEP_KEYS: [KeySpec; 9] = [
    key(
        "ells",
        "gaussian:0.5,0.1;gaussian:0.5,0.2",
        "preference specs separated by ';'",
    ),
    key("alpha", "0.75", "meeting-rate slopes (list)"),
    key("r_f", "0.05,0.1,0.2,0.3", "friction ratios (list)"),
    key("n", "512", "grid points"),
    key("profiles", "true", "also write every profile"),
    SOLVER_KEYS[0],
    SOLVER_KEYS[1],
    SOLVER_KEYS[2],
    SOLVER_KEYS[3],
];

pub fn sweep(p: &Params, out: &mut Output) -> Result<()> {
    let grid = searchmatch::market::Grid::new(p.usize("n")?)?;
    let specs: Vec<String> = p
        .str("ells")
        .split(';')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let ells: Vec<PreferenceDistribution> = specs
        .iter()
        .map(|s| PreferenceDistribution::new(&parse_preference(s).map_err(Error::InvalidInput)?, &grid))
        .collect::<Result<_>>()?;
    let alphas = p.list("alpha")?;
    let rs = p.list("r_f")?;
    let opts = p.solve_options()?;
    let mut cases = Vec::new();
    for e in 0..ells.len() {
        for &a in &alphas {
            cases.extend(rs.iter().map(|&r| (e, a, r)));
        }
    }
    let results: Vec<(String, Result<_>)> = cases
        .par_iter()
        .map(|&(e, a, r)| {
            let label = format!("{} alpha = {a} r_f = {r}", specs[e]);
            (
                label,
                solve_profile(&ells[e], r, a, 1.0, "auto", &opts).map(|(s, rep)| (e, a, r, s, rep)),
            )
        })
        .collect();
    let (solved, deferred) = split_failures(results, out)?;
    let mut rows = Vec::new();
    let mut profile_rows = Vec::new();
    for (e, a, r, s, rep) in &solved {
        let st = profile_stats(s);
        let (iters, resid) = rep.map_or((0, 0.0), |x| (x.iterations, x.residual));
        rows.push(vec![
            specs[*e].clone(),
            f(*a),
            f(*r),
            f(st.variance),
            f(st.max),
            f(st.min),
            f(st.argmax),
            iters.to_string(),
            f(resid),
        ]);
        for (i, v) in s.shares().iter().enumerate() {
            profile_rows.push(vec![specs[*e].clone(), f(*a), f(*r), f(grid.point(i)), f(*v)]);
        }
    }
    out.csv(
        "sweep.csv",
        &[
            "ell",
            "alpha",
            "r_f",
            "variance",
            "max",
            "min",
            "argmax",
            "iterations",
            "residual",
        ],
        rows,
    )?;
    if p.bool("profiles")? {
        out.csv("profiles.csv", &["ell", "alpha", "r_f", "y", "s"], profile_rows)?;
    }
    let mut trends = Vec::new();
    for (e, spec) in specs.iter().enumerate() {
        for &a in &alphas {
            let mut series: Vec<(f64, f64)> = solved
                .iter()
                .filter(|c| c.0 == e && c.1 == a)
                .map(|c| (c.2, profile_stats(&c.3).variance))
                .collect();
            series.sort_by(|x, y| x.0.total_cmp(&y.0));
            let up = series.windows(2).all(|w| w[1].1 >= w[0].1);
            let down = series.windows(2).all(|w| w[1].1 <= w[0].1);
            let trend = match (up, down) {
                (true, true) => "flat",
                (true, false) => "non-decreasing",
                (false, true) => "non-increasing",
                _ => "mixed",
            };
            trends.push(json!({ "ell": spec, "alpha": a, "variance_trend_in_r_f": trend, "ell_variance": ells[e].variance() }));
        }
    }
    out.json("summary.json", &trends)?;
    deferred.map_or(Ok(()), Err)
}
