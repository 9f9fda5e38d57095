use std::fs;
use std::path::{Path, PathBuf};

use lmnet::dataset::{AugmentConfig, SynthConfig};
use lmnet::geom::ProjectionConfig;
use lmnet::net::{NetConfig, TrainConfig};
use lmnet::postproc::NmsConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Default locations used when a command is given no path flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset root with `velodyne/`, `label_2/` and `calib/`.
    pub data: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything a command can be configured with, as one TOML document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub projection: ProjectionConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub nms: NmsConfig,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PipelineConfig::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.projection.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.nms.validate()?;
        self.synth.validate()?;
        Ok(())
    }
}

/// A flag value, else the configured default, else a usage error.
pub fn resolve(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or [paths] entry)")))
}
