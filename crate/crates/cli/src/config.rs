//! TOML configuration shared by the CLI and the service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shield_core::induction::ChatConfig;
use shield_core::metric::SearchConfig;
use shield_core::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Static files served under `/ui`.
    pub ui_dir: PathBuf,
    pub lock_ttl_secs: i64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8700,
            ui_dir: PathBuf::from("web/dist"),
            lock_ttl_secs: shield_core::store::DEFAULT_LOCK_TTL_SECS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InductionConfig {
    /// Use the HTTP chat client instead of canned replays.
    pub live: bool,
    pub replay_dir: Option<PathBuf>,
    pub audit_dir: Option<PathBuf>,
    /// Extra regular expressions removed during cleaning.
    pub clean_patterns: Vec<String>,
    pub chat: ChatConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub metric: SearchConfig,
    pub induction: InductionConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// Overrides every seed in the configuration.
    pub fn apply_seed(&mut self, seed: u64) {
        self.pipeline.train.seed = seed;
        self.pipeline.dataset.seed = seed;
        self.metric.seed = seed;
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| PathBuf::from("shield-data"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults() {
        let c: Config = toml::from_str("[service]\nport = 9000\n[pipeline]\nstages = \"gcn_only\"\n").unwrap();
        assert_eq!(c.service.port, 9000);
        assert_eq!(c.service.host, "127.0.0.1");
        assert_eq!(c.pipeline.stages, shield_core::pipeline::Stages::GcnOnly);
        assert_eq!(c.pipeline.train, Default::default());
    }

    #[test]
    fn seed_override() {
        let mut c = Config::default();
        c.apply_seed(7);
        assert_eq!((c.pipeline.train.seed, c.pipeline.dataset.seed, c.metric.seed), (7, 7, 7));
    }
}
