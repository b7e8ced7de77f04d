//! Experiment configuration: one self-describing JSON file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evopsf::{AdaptationConfig, Strategy};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;
use crate::worldsim::{
    default_corruptions, default_profiles, CorruptionLevel, RegionProfile, SuiteCounts, SuiteKind,
};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "EVOPSF_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub suite: SuiteKind,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub adaptation: AdaptationConfig,
    pub model: ModelConfig,
    pub profile_a: RegionProfile,
    pub profile_b: RegionProfile,
    pub corruptions: Vec<CorruptionLevel>,
    pub counts: SuiteCounts,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let (profile_a, profile_b) = default_profiles();
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            suite: SuiteKind::CrossRegion,
            strategies: vec![Strategy::Frozen, Strategy::TtaEntropy, Strategy::Evopsf],
            seeds: (0..10).collect(),
            train: TrainConfig::default(),
            adaptation: AdaptationConfig::default(),
            model: ModelConfig::default(),
            profile_a,
            profile_b,
            corruptions: default_corruptions(),
            counts: SuiteCounts::default(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} unsupported (want {})",
                self.schema_version, CONFIG_SCHEMA_VERSION
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("need at least one strategy".into()));
        }
        self.train.validate()?;
        self.adaptation.validate()?;
        self.model.validate()?;
        self.profile_a.validate()?;
        self.profile_b.validate()?;
        Ok(())
    }

    /// Parse from JSON, honoring the `EVOPSF_OUT` override.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(s)?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = dir;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    /// Train profiles the suite needs checkpoints for.
    pub fn train_profiles(&self) -> Vec<&RegionProfile> {
        match self.suite {
            SuiteKind::InDomain | SuiteKind::Corruption => vec![&self.profile_a],
            SuiteKind::CrossRegion => vec![&self.profile_a, &self.profile_b],
        }
    }
}
