//! Plain `key = value` configuration with `LATENTBRUSH_*` environment overrides.
//!
//! ```text
//! # comments start with '#'
//! port = 8080
//! store_dir = /var/lib/latentbrush
//! model.default = models/shapes
//! step_budget = 50
//! ```
//!
//! Every key `a.b` can be overridden by the variable `LATENTBRUSH_A_B`. Models can be added
//! from the environment as `LATENTBRUSH_MODEL_<ID>=path`; the id is lowercased.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use latentbrush::transfer::TransferConfig;

use crate::error::{ApiError, Result};

pub const ENV_PREFIX: &str = "LATENTBRUSH_";

/// Knobs of the editing operations, shared by every session.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    /// Largest `k` accepted by one step request.
    pub step_budget: usize,
    pub step_lr: f32,
    pub candidate_pool: usize,
    pub candidate_keep: usize,
    pub candidate_perturb: f32,
    pub candidate_steps: usize,
    pub candidate_seed: u64,
    pub projection_steps: usize,
    pub projection_lr: f32,
    pub transfer: TransferConfig,
    /// Seed for blank-mode starting latents; each session mixes in its own counter.
    pub blank_seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            step_budget: 50,
            step_lr: 0.05,
            candidate_pool: 16,
            candidate_keep: 9,
            candidate_perturb: 0.3,
            candidate_steps: 10,
            candidate_seed: 0,
            projection_steps: 100,
            projection_lr: 0.1,
            transfer: TransferConfig::default(),
            blank_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub store_dir: Option<PathBuf>,
    /// Model id to bundle directory.
    pub models: BTreeMap<String, PathBuf>,
    pub default_model: String,
    pub settings: Settings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            store_dir: None,
            models: BTreeMap::new(),
            default_model: "default".into(),
            settings: Settings::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| ApiError::Config(format!("{key}: cannot parse {value:?}")))
}

impl ServiceConfig {
    /// Parse config text; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ApiError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ApiError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.settings;
        match key {
            "host" => self.host = value.to_string(),
            "port" => self.port = parse(key, value)?,
            "store_dir" => self.store_dir = Some(PathBuf::from(value)),
            "default_model" => self.default_model = value.to_string(),
            "step_budget" => s.step_budget = parse(key, value)?,
            "step_lr" => s.step_lr = parse(key, value)?,
            "candidates.pool" => s.candidate_pool = parse(key, value)?,
            "candidates.keep" => s.candidate_keep = parse(key, value)?,
            "candidates.perturb" => s.candidate_perturb = parse(key, value)?,
            "candidates.steps" => s.candidate_steps = parse(key, value)?,
            "candidates.seed" => s.candidate_seed = parse(key, value)?,
            "projection.steps" => s.projection_steps = parse(key, value)?,
            "projection.lr" => s.projection_lr = parse(key, value)?,
            "transfer.frames" => s.transfer.frames = parse(key, value)?,
            "blank_seed" => s.blank_seed = parse(key, value)?,
            _ => match key.strip_prefix("model.") {
                Some(id) if !id.is_empty() => {
                    self.models.insert(id.to_string(), PathBuf::from(value));
                }
                _ => return Err(ApiError::Config(format!("unknown key {key:?}"))),
            },
        }
        Ok(())
    }

    const KEYS: [&'static str; 15] = [
        "host",
        "port",
        "store_dir",
        "default_model",
        "step_budget",
        "step_lr",
        "candidates.pool",
        "candidates.keep",
        "candidates.perturb",
        "candidates.steps",
        "candidates.seed",
        "projection.steps",
        "projection.lr",
        "transfer.frames",
        "blank_seed",
    ];

    /// Apply overrides from `vars` (normally `std::env::vars()`).
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = Self::KEYS
                .iter()
                .find(|k| k.replace('.', "_").to_uppercase() == rest)
                .map(|k| k.to_string());
            match key {
                Some(k) => self.set(&k, &value)?,
                None => match rest.strip_prefix("MODEL_") {
                    Some(id) if !id.is_empty() => self.set(&format!("model.{}", id.to_lowercase()), &value)?,
                    _ => log::warn!("ignoring unknown variable {name}"),
                },
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        if s.step_budget == 0 || s.candidate_keep == 0 || s.candidate_keep > s.candidate_pool {
            return Err(ApiError::Config(
                "step_budget and candidates.keep must be positive, keep at most candidates.pool".into(),
            ));
        }
        if s.transfer.frames == 0 {
            return Err(ApiError::Config("transfer.frames must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_models() {
        let cfg = ServiceConfig::parse("# c\nport = 9000\nmodel.shoes = /m/shoes\n\ncandidates.keep=4\n").unwrap();
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.models["shoes"], PathBuf::from("/m/shoes"));
        assert_eq!(cfg.settings.candidate_keep, 4);
    }

    #[test]
    fn rejects_garbage() {
        assert!(ServiceConfig::parse("port 9000").is_err());
        assert!(ServiceConfig::parse("port = nine").is_err());
        assert!(ServiceConfig::parse("colour = red").is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut cfg = ServiceConfig::parse("port = 9000\nstep_budget = 5").unwrap();
        cfg.apply_env([
            ("LATENTBRUSH_PORT".to_string(), "9100".to_string()),
            ("LATENTBRUSH_CANDIDATES_STEPS".to_string(), "3".to_string()),
            ("LATENTBRUSH_MODEL_BAGS".to_string(), "/m/bags".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.port, 9100);
        assert_eq!(cfg.settings.step_budget, 5);
        assert_eq!(cfg.settings.candidate_steps, 3);
        assert_eq!(cfg.models["bags"], PathBuf::from("/m/bags"));
    }
}
