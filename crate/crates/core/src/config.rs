//! Run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::TrainConfig;
use crate::anatomy::RewardWeights;
use crate::env::EpisodeConfig;
use crate::imaging::ImageConfig;
use crate::phantom::PhantomSpec;
use crate::{Error, Result};

/// Input and output locations; all optional, command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub phantoms: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are rejected at every nesting level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub image: ImageConfig,
    pub weights: RewardWeights,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            image: ImageConfig::default(),
            weights: RewardWeights::default(),
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            phantom: PhantomSpec::default(),
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.weights.validate()?;
        self.episode.validate()?;
        self.train.validate()?;
        self.phantom.validate()?;
        if self.weights.pair_weights.len() != crate::anatomy::PairSet::a4c().len() {
            return Err(Error::contract(format!(
                "expected {} pair weights, got {}",
                crate::anatomy::PairSet::a4c().len(),
                self.weights.pair_weights.len()
            )));
        }
        Ok(())
    }
}
