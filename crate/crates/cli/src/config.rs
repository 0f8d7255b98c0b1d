//! Flat `key = value` experiment configuration.
//!
//! Each subcommand declares its keys with defaults. Values come from the
//! defaults, then the config file, then `--override` flags, then `--seed`.
//! Keys outside the schema are rejected at every stage.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
}

pub const fn key(name: &'static str, default: &'static str) -> Key {
    Key { name, default }
}

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Config {
    pub fn from_defaults(schema: &[Key]) -> Self {
        Self {
            values: schema.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }

    pub fn load(schema: &[Key], file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<Self> {
        let mut cfg = Self::from_defaults(schema);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k, v, "--override")?;
        }
        if let Some(s) = seed {
            cfg.set("seed", &s.to_string(), "--seed")?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line)
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", lineno + 1)))?;
            self.set(k, v, origin)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, origin: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => {
                let known: Vec<&str> = self.values.keys().copied().collect();
                Err(CliError::Config(format!(
                    "unknown key {key:?} from {origin} (known: {})",
                    known.join(", ")
                )))
            }
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key:?} missing from the command schema"))
    }

    pub fn get<T>(&self, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("{key}: {s:?}: {e}"))))
            .collect()
    }

    /// Resolved settings, one `key=value` per line, sorted by key.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of [`Config::canonical`] in lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[Key] = &[key("seed", "0"), key("eta", "0.1"), key("etas", "0.2,0.1")];

    #[test]
    fn file_then_overrides_then_seed() {
        let mut cfg = Config::from_defaults(SCHEMA);
        cfg.apply_text("# comment\neta = 0.5  # trailing\n\n", "test").unwrap();
        assert_eq!(cfg.get::<f64>("eta").unwrap(), 0.5);
        let cfg = Config::load(SCHEMA, None, &["eta=0.25".into()], Some(7)).unwrap();
        assert_eq!(cfg.get::<f64>("eta").unwrap(), 0.25);
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 7);
        assert_eq!(cfg.list::<f64>("etas").unwrap(), vec![0.2, 0.1]);
    }

    #[test]
    fn unknown_and_malformed_entries_are_rejected() {
        let mut cfg = Config::from_defaults(SCHEMA);
        assert!(matches!(cfg.apply_text("bogus = 1", "t"), Err(CliError::Config(_))));
        assert!(matches!(cfg.apply_text("eta 1", "t"), Err(CliError::Config(_))));
        assert!(Config::load(SCHEMA, None, &["eta".into()], None).is_err());
        cfg.apply_text("eta = abc", "t").unwrap();
        assert!(cfg.get::<f64>("eta").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let a = Config::from_defaults(SCHEMA);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.apply_text("eta = 0.3", "t").unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
