use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// A CSV table whose rows are already formatted. Every written row is
/// prefixed with the config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(std::iter::once("config_hash").chain(self.header.iter().map(String::as_str)))?;
        for row in &self.rows {
            w.write_record(std::iter::once(config_hash).chain(row.iter().map(String::as_str)))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Formats a float with the shortest representation that round-trips.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn nums<'a>(vs: impl IntoIterator<Item = &'a f64>) -> Vec<String> {
    vs.into_iter().map(|v| num(*v)).collect()
}

/// Column names `prefix0, prefix1, …`.
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    experiment: &'a str,
    config_hash: String,
    seed: u64,
    config: &'a ExperimentConfig,
    files: Vec<String>,
    ddlab_cli_version: &'static str,
    ddlab_core_version: &'static str,
    threads: usize,
    created_unix_seconds: u64,
    wall_seconds: f64,
}

/// Writes every table plus `meta.json`. Only `created_unix_seconds` and
/// `wall_seconds` vary between identical runs.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, tables: &[Table], wall_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let hash = cfg.hash();
    let mut files = Vec::new();
    for t in tables {
        t.write(dir, &hash)?;
        files.push(format!("{}.csv", t.name));
    }
    let meta = Meta {
        experiment: cfg.experiment.name(),
        config_hash: hash,
        seed: cfg.seed,
        config: cfg,
        files,
        ddlab_cli_version: env!("CARGO_PKG_VERSION"),
        ddlab_core_version: ddlab_core::VERSION,
        threads: rayon::current_num_threads(),
        created_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_seconds,
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(())
}
