//! Flat `key=value` parameters: built-in defaults, then preset values, then
//! a config file, then `--set` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use searchmatch::continuum::SolveOptions;
use searchmatch::market::{Grid, PreferenceDistribution, PreferenceKind, SurplusFunction};
use searchmatch::{Error, Result};

/// A recognised key with its default value (empty for "unset").
#[derive(Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

pub struct Params {
    command: &'static str,
    values: BTreeMap<String, String>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl Params {
    pub fn new(command: &'static str, specs: &[KeySpec]) -> Self {
        Params {
            command,
            values: specs.iter().map(|s| (s.key.to_string(), s.default.to_string())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(invalid(format!(
                "unknown key {key:?} for {}; known keys: {}",
                self.command,
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| invalid(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Reads a flat config file: one `key=value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).map_err(|e| Error::Malformed {
                line: i as u64 + 1,
                message: format!("{}: {e}", path.display()),
            })?;
        }
        Ok(())
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {key} not declared"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.str(key).is_empty()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.str(key);
        v.parse().map_err(|_| invalid(format!("{key}: expected {what}, got {v:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key, "a number")
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        if self.is_set(key) {
            self.f64(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "a non-negative integer")
    }

    pub fn i32(&self, key: &str) -> Result<i32> {
        self.parse(key, "an integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key, "true or false")
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        parse_list(self.str(key)).map_err(|e| invalid(format!("{key}: {e}")))
    }

    pub fn preference(&self, key: &str) -> Result<PreferenceKind> {
        parse_preference(self.str(key)).map_err(|e| invalid(format!("{key}: {e}")))
    }

    pub fn distribution(&self, key: &str, grid_key: &str) -> Result<PreferenceDistribution> {
        PreferenceDistribution::new(&self.preference(key)?, &Grid::new(self.usize(grid_key)?)?)
    }

    pub fn surplus(&self, key: &str) -> Result<SurplusFunction> {
        let v = self.str(key);
        let (name, args) = split_spec(v);
        let nums = numbers(args).map_err(|e| invalid(format!("{key}: {e}")))?;
        let sf = match (name, nums.as_slice()) {
            ("linear", [a, b]) => SurplusFunction::Linear {
                intercept: *a,
                slope: *b,
            },
            ("exp", [a, b]) => SurplusFunction::Exponential { scale: *a, rate: *b },
            _ => return Err(invalid(format!("{key}: expected linear:a,b or exp:a,b, got {v:?}"))),
        };
        sf.validate()?;
        Ok(sf)
    }

    /// Solver options from `tolerance`, `max_iterations`, `damping` and
    /// `acceleration`.
    pub fn solve_options(&self) -> Result<SolveOptions> {
        let opts = SolveOptions {
            tolerance: self.f64("tolerance")?,
            max_iterations: self.usize("max_iterations")?,
            damping: self.f64("damping")?,
            acceleration: self.usize("acceleration")?,
            ..SolveOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

pub const SOLVER_KEYS: [KeySpec; 4] = [
    key("tolerance", "1e-10", "fixed-point step tolerance"),
    key("max_iterations", "10000", "fixed-point iteration cap"),
    key("damping", "0.5", "weight on the new iterate"),
    key("acceleration", "5", "Anderson mixing depth, 0 for plain iteration"),
];

fn split_spec(s: &str) -> (&str, &str) {
    match s.split_once(':') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s.trim(), ""),
    }
}

fn numbers(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect()
}

/// `a,b,c` or `start:stop:count` (inclusive, evenly spaced).
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let out = match parts.as_slice() {
        [single] => numbers(single)?,
        [a, b, c] => {
            let (a, b): (f64, f64) = (
                a.trim().parse().map_err(|_| "bad start")?,
                b.trim().parse().map_err(|_| "bad stop")?,
            );
            let n: usize = c.trim().parse().map_err(|_| "bad count")?;
            match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            }
        }
        _ => return Err(format!("expected a,b,c or start:stop:count, got {s:?}")),
    };
    if out.is_empty() {
        return Err("empty list".into());
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(out)
}

/// `uniform`, `block:lo,hi,height`, `gaussian:center,sd`,
/// `double:c1,sd1,c2,sd2,weight` or `triangular:lo,mode,hi`.
pub fn parse_preference(s: &str) -> std::result::Result<PreferenceKind, String> {
    let (name, args) = split_spec(s);
    let v = numbers(args)?;
    Ok(match (name, v.as_slice()) {
        ("uniform", []) => PreferenceKind::Uniform,
        ("block", [lo, hi, height]) => PreferenceKind::Block {
            lo: *lo,
            hi: *hi,
            height: *height,
        },
        ("gaussian", [center, sd]) => PreferenceKind::WrappedGaussian {
            center: *center,
            sd: *sd,
        },
        ("double", [c1, sd1, c2, sd2, weight]) => PreferenceKind::DoublePeak {
            c1: *c1,
            sd1: *sd1,
            c2: *c2,
            sd2: *sd2,
            weight: *weight,
        },
        ("triangular", [lo, mode, hi]) => PreferenceKind::Triangular {
            lo: *lo,
            mode: *mode,
            hi: *hi,
        },
        _ => return Err(format!("unrecognised preference spec {s:?}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("0.1, 0.5,1").unwrap(), [0.1, 0.5, 1.0]);
        assert_eq!(parse_list("0:1:5").unwrap(), [0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_list("2:3:1").unwrap(), [2.0]);
        assert!(parse_list("").is_err());
        assert!(parse_list("a,b").is_err());
        assert!(parse_list("0:1").is_err());
    }

    #[test]
    fn preference_specs() {
        assert_eq!(parse_preference("uniform").unwrap(), PreferenceKind::Uniform);
        assert_eq!(
            parse_preference("block:0.25,0.75,2").unwrap(),
            PreferenceKind::Block {
                lo: 0.25,
                hi: 0.75,
                height: 2.0
            }
        );
        assert!(matches!(
            parse_preference("gaussian:0.5,0.1").unwrap(),
            PreferenceKind::WrappedGaussian { .. }
        ));
        assert!(parse_preference("gaussian:0.5").is_err());
        assert!(parse_preference("cauchy:1,2").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut p = Params::new("demo", &[key("a", "1", "")]);
        p.assign("a = 2").unwrap();
        assert_eq!(p.f64("a").unwrap(), 2.0);
        assert!(matches!(p.assign("b=1"), Err(Error::InvalidInput(_))));
        assert!(p.assign("novalue").is_err());
    }

    #[test]
    fn config_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\na=3 # trailing\n\nzzz=1\n").unwrap();
        let mut p = Params::new("demo", &[key("a", "1", "")]);
        match p.load_file(&path) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.f64("a").unwrap(), 3.0);
    }
}
