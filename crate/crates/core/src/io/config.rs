//! TOML run configuration shared by the commands. Command-line flags
//! override values read from the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::Result;
use crate::field::FieldArch;
use crate::train::TrainConfig;

/// Sample counts; ray bounds come from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_coarse: 64, n_fine: 128 }
    }
}

/// Training-loop bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Log progress every this many steps; 0 disables.
    pub log_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub augment: AugmentConfig,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub model: FieldArch,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// File contents when a path is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.train_config().validate()?;
        self.model.validate()?;
        if self.sampling.n_coarse < 2 {
            return Err(crate::Error::Config("at least two coarse samples are required".into()));
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }
}
