pub mod kernel;
pub mod motor;
pub mod olm;
pub mod sweep;
pub mod verify;

use std::io::Cursor;

use manifold_sgd::{olm_generate, DataDistribution, OlmProblem};

use crate::config::{key, Config, Key};
use crate::error::{CliError, CliResult};

/// Keys shared by every command that builds an OLM instance.
pub const OLM_KEYS: [Key; 7] = [
    key("n", "20"),
    key("d", "40"),
    key("kappa", "3"),
    key("dist", "gaussian"),
    key("mag_lo", "0.5"),
    key("mag_hi", "2.0"),
    key("problem", ""),
];

pub fn schema(extra: &[Key], with_olm: bool) -> Vec<Key> {
    let mut keys = vec![key("seed", "0")];
    if with_olm {
        keys.extend(OLM_KEYS);
    }
    keys.extend_from_slice(extra);
    keys
}

/// The OLM instance named by the config: read from `problem` when set,
/// otherwise sampled with the given seed.
pub fn olm_problem(cfg: &Config, seed: u64) -> CliResult<OlmProblem> {
    let path = cfg.raw("problem");
    if !path.is_empty() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        return Ok(OlmProblem::read_text(Cursor::new(body))?);
    }
    let lo: f64 = cfg.get("mag_lo")?;
    let hi: f64 = cfg.get("mag_hi")?;
    if !(0.0 < lo && lo <= hi) {
        return Err(CliError::Config(format!("need 0 < mag_lo <= mag_hi, got {lo} and {hi}")));
    }
    let dist: DataDistribution = cfg.get("dist")?;
    Ok(olm_generate(cfg.get("n")?, cfg.get("d")?, cfg.get("kappa")?, dist, (lo, hi), seed)?)
}

pub fn positive(cfg: &Config, name: &str) -> CliResult<f64> {
    let v: f64 = cfg.get(name)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

pub fn at_least(cfg: &Config, name: &str, min: usize) -> CliResult<usize> {
    let v: usize = cfg.get(name)?;
    if v >= min {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be at least {min}, got {v}")))
    }
}

/// `count` consecutive seeds starting at `seed`.
pub fn seed_range(cfg: &Config, count: usize) -> CliResult<Vec<u64>> {
    let base: u64 = cfg.get("seed")?;
    Ok((0..count as u64).map(|k| base.wrapping_add(k)).collect())
}
