//! Flat key = value configuration with sections. Keys are addressed as
//! `section.key`; later assignments and CLI overrides win. Every run
//! writes the resolved configuration next to its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use branchwave::error::Error;

pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, Error> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {path:?}: {e}")))?;
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {} is not key = value", lineno + 1))
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            values.insert(key, v.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<String, Error> {
        self.values
            .get(key)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("missing config key {key}")))
    }

    pub fn get_or(&self, key: &str, default: &str) -> String {
        self.values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, Error> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::invalid(format!("config key {key} is not a number")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, Error> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::invalid(format!("config key {key} is not an integer")))
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> Result<u64, Error> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::invalid(format!("config key {key} is not an integer"))),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, Error> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::invalid(format!("config key {key} is not an integer")))
    }

    pub fn get_usize_or(&self, key: &str, default: usize) -> Result<usize, Error> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::invalid(format!("config key {key} is not an integer"))),
        }
    }

    /// Sorted key = value listing written next to every run's outputs.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
