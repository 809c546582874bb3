//! Command-line front end.

mod commands;
mod output;
pub mod params;
pub mod presets;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use searchmatch::{Error, Result};

use output::Output;
use params::{KeySpec, Params};

#[derive(Parser, Debug)]
#[command(
    name = "searchmatch",
    version,
    about = "Frictional matching markets: solve, simulate, estimate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value file applied after the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Named parameter set; see `searchmatch presets`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Parameter override, applied last. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the accepted keys with their defaults and exit.
    #[arg(long)]
    pub keys: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Two-firm market shares (constant, proportional or affine meeting rates).
    TwoFirm(Common),
    /// Equilibrium firm-size profiles on the circle.
    Continuum(Common),
    /// Matching efficiency, best responses and the Nash/social comparison.
    Efficiency(Common),
    /// Event-driven Monte Carlo of a market.
    Simulate(Common),
    /// Meeting-rate slope from a transaction CSV.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Transaction CSV (header year,market_id,firm_id,buyer_id,value).
        input: Option<PathBuf>,
    },
    /// Synthetic transaction panel drawn from the simulator.
    SynthPanel(Common),
    /// Share variance over grids of preferences, slopes and frictions.
    Sweep(Common),
    /// List the built-in presets.
    Presets,
}

fn prepare(name: &'static str, specs: &[KeySpec], common: &Common) -> Result<Option<(Params, Output)>> {
    if common.keys {
        for s in specs {
            println!(
                "{:<18} {:<24} {}",
                s.key,
                if s.default.is_empty() { "(unset)" } else { s.default },
                s.help
            );
        }
        return Ok(None);
    }
    let mut p = Params::new(name, specs);
    if let Some(preset) = &common.preset {
        let pre = presets::find(preset).ok_or_else(|| Error::InvalidInput(format!("unknown preset {preset:?}")))?;
        if pre.command != name {
            return Err(Error::InvalidInput(format!(
                "preset {preset} belongs to `{}`, not `{name}`",
                pre.command
            )));
        }
        for (k, v) in pre.values {
            p.set(k, v)?;
        }
    }
    if let Some(path) = &common.config {
        p.load_file(path)?;
    }
    for s in &common.set {
        p.assign(s)?;
    }
    let out = Output::new(name, common)?;
    Ok(Some((p, out)))
}

pub fn run(cli: Cli) -> Result<()> {
    use commands as c;
    let (name, specs, common, run): (&'static str, &[KeySpec], Common, c::Runner) = match cli.command {
        Command::Presets => {
            for p in presets::PRESETS {
                println!("{:<8} {:<12} {}", p.name, p.command, p.about);
            }
            return Ok(());
        }
        Command::TwoFirm(common) => ("two-firm", &c::TWO_FIRM_KEYS, common, c::two_firm),
        Command::Continuum(common) => ("continuum", &c::CONTINUUM_KEYS, common, c::continuum),
        Command::Efficiency(common) => ("efficiency", &c::EFFICIENCY_KEYS, common, c::efficiency_cmd),
        Command::Simulate(common) => ("simulate", &c::SIMULATE_KEYS, common, c::simulate),
        Command::Estimate { mut common, input } => {
            if let Some(path) = input {
                common.set.insert(0, format!("input={}", path.display()));
            }
            ("estimate", &c::ESTIMATE_KEYS, common, c::estimate)
        }
        Command::SynthPanel(common) => ("synth-panel", &c::SYNTH_KEYS, common, c::synth_panel_cmd),
        Command::Sweep(common) => ("sweep", &c::SWEEP_KEYS, common, c::sweep),
    };
    let Some((params, mut out)) = prepare(name, specs, &common)? else {
        return Ok(());
    };
    let result = run(&params, &mut out);
    out.finish(&params, result.as_ref().err())?;
    result
}
