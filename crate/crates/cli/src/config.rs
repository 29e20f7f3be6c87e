//! `key = value` defaults file. Blank lines and lines starting with `#` are
//! ignored; command-line flags override file values.
//!
//! Keys: seed, threads, data_dir, perplexity, iterations, theta,
//! exact_threshold, kernel, gamma, c, bins, label, epochs, lr, val_fraction,
//! tau, max_shift, spacing_mm, addr, max_jobs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult, Context};

pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "data_dir",
    "perplexity",
    "iterations",
    "theta",
    "exact_threshold",
    "kernel",
    "gamma",
    "c",
    "bins",
    "label",
    "epochs",
    "lr",
    "val_fraction",
    "tau",
    "max_shift",
    "spacing_mm",
    "addr",
    "max_jobs",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().replace('-', "_");
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Invalid(format!("line {}: unknown key `{k}`", n + 1)));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|e| CliError::Invalid(format!("config `{key}` = `{v}`: {e}"))))
            .transpose()
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}
