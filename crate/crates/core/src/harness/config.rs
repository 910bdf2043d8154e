use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentConfig;
use crate::error::{Error, Result};
use crate::shop_sim::{BehaviorConfig, CatalogConfig};

/// Session-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sessions: u64,
    /// Random-policy sessions used to pretrain environment models.
    pub warmup_sessions: u64,
    pub session_seed: u64,
    pub metrics_window: usize,
    /// Fill the `wall_ms` column; off keeps the CSV deterministic.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sessions: 30_000,
            warmup_sessions: 2000,
            session_seed: 1,
            metrics_window: 1000,
            record_wall_time: false,
        }
    }
}

/// A complete experiment description, one TOML table per section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub catalog: CatalogConfig,
    pub behavior: BehaviorConfig,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.behavior.validate()?;
        self.agent.validate()?;
        if self.run.sessions == 0 {
            return Err(Error::config("run.sessions", "must be at least 1"));
        }
        if self.run.metrics_window == 0 {
            return Err(Error::config("run.metrics_window", "must be at least 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; the config hash is taken over it.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialize")
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml_string().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }
}

/// Copy of `config` with the dotted parameter `param` set to `raw`, which is
/// read as a TOML value (bare words are taken as strings).
pub fn apply_override(config: &ExperimentConfig, param: &str, raw: &str) -> Result<ExperimentConfig> {
    let mut root = toml::Value::try_from(config).expect("experiment configs always serialize");
    let mut slot = &mut root;
    for part in param.split('.') {
        slot = slot
            .as_table_mut()
            .and_then(|t| t.get_mut(part))
            .ok_or_else(|| Error::config(param, "unknown parameter"))?;
    }
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    *slot = match (&*slot, parsed) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    let cfg: ExperimentConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(param, e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
