use std::fs;
use std::path::{Path, PathBuf};

use searchmatch::{Error, Result};
use serde::Serialize;

use super::params::Params;
use super::Common;

/// Output directory plus the manifest written beside the results.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    preset: Option<String>,
    config: Option<PathBuf>,
    seed: u64,
    files: Vec<String>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    preset: Option<&'a str>,
    config_file: Option<String>,
    seed: u64,
    params: &'a std::collections::BTreeMap<String, String>,
    outputs: &'a [String],
    status: &'a str,
    error: Option<String>,
    notes: &'a [String],
}

impl Output {
    pub fn new(command: &'static str, common: &Common) -> Result<Self> {
        fs::create_dir_all(&common.out)?;
        Ok(Output {
            dir: common.out.clone(),
            command,
            preset: common.preset.clone(),
            config: common.config.clone(),
            seed: common.seed,
            files: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Records a file written by library code into the output directory.
    pub fn track(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn csv<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.as_ref())?;
        }
        w.flush()?;
        self.track(name);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        self.track(name);
        Ok(())
    }

    pub fn finish(&mut self, params: &Params, error: Option<&Error>) -> Result<()> {
        let status = match error {
            None => "ok",
            Some(Error::NonConvergence { .. }) => "non-convergence",
            Some(_) => "error",
        };
        let m = Manifest {
            tool: "searchmatch",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            preset: self.preset.as_deref(),
            config_file: self.config.as_ref().map(|p| p.display().to_string()),
            seed: self.seed,
            params: params.resolved(),
            outputs: &self.files,
            status,
            error: error.map(|e| e.to_string()),
            notes: &self.notes,
        };
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}

/// Formats a float for CSV output with full round-trip precision.
pub fn f(v: f64) -> String {
    v.to_string()
}
