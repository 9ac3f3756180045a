use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::DataConfig;
use crate::error::{Error, Result};
use crate::lift::LiftConfig;
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::util::write_atomic;

/// File name of the resolved configuration echoed into every output directory.
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

/// Every tunable of a run, one TOML section per module. Missing sections
/// and keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub lift: LiftConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.max_steps == 0 || self.eval.max_tokens == 0 {
            return Err(Error::Config("eval.max_steps and eval.max_tokens must be positive".into()));
        }
        if self.lift.views == 0 || self.lift.width == 0 || self.lift.height == 0 {
            return Err(Error::Config("lift views and resolution must be positive".into()));
        }
        Ok(())
    }

    /// Routes one seed to every consumer of randomness.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(RESOLVED_CONFIG_FILE), self.to_toml().as_bytes())
    }
}
