//! Experiment configuration and content hashes.

use crate::error::{CliError, CliResult};
use mdg_core::diffusion::{
    make_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_DDIM_STEPS, DEFAULT_TRAIN_STEPS,
};
use mdg_core::{GuidanceConfig, SyntheticWorld, WorldParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub ddim_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: DEFAULT_TRAIN_STEPS,
            ddim_steps: DEFAULT_DDIM_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> CliResult<NoiseSchedule> {
        Ok(make_schedule(self.train_steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub num_samples: usize,
    pub seed: u64,
    /// Where `sample` writes when `--out` is absent. Not part of the hash.
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { num_samples: 200, seed: 0, out_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldParams,
    pub schedule: ScheduleConfig,
    pub guidance: GuidanceConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Reads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.run.num_samples == 0 {
            return Err(CliError::Config("run.num_samples must be at least 1".into()));
        }
        if self.schedule.ddim_steps == 0 || self.schedule.ddim_steps > self.schedule.train_steps {
            return Err(CliError::Config("schedule.ddim_steps must lie in 1..=train_steps".into()));
        }
        let invalid = |e: mdg_core::MdgError| CliError::Config(e.to_string());
        self.schedule.build().map_err(|e| match e {
            CliError::Core(e) => invalid(e),
            other => other,
        })?;
        self.guidance.validate().map_err(invalid)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form with `run.out_dir` cleared.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.out_dir = None;
        let value = serde_json::to_value(&canonical).expect("config serializes");
        sha256_hex(value.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the compact JSON encoding of a world.
pub fn world_hash(world: &SyntheticWorld) -> String {
    sha256_hex(&serde_json::to_vec(world).expect("world serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.run.out_dir = Some("/tmp/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c =
            ExperimentConfig::from_json(r#"{"run": {"num_samples": 5}, "guidance": {"mode": "pairwise"}}"#).unwrap();
        assert_eq!(c.run.num_samples, 5);
        assert_eq!(c.guidance.mode, mdg_core::GuidanceMode::Pairwise);
        assert_eq!(c.schedule, ScheduleConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"run": {"num_samples": 0}}"#), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"bogus": 1}"#), Err(CliError::Config(_))));
        let err = ExperimentConfig::from_json(r#"{"guidance": {"eta": -1.0}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
