//! TOML run configuration.

use std::path::Path;

use cora_core::{FixtureConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config")]
    Parse(#[from] toml::de::Error),
    #[error("writing config")]
    Serialize(#[from] toml::ser::Error),
}

fn default_thresholds() -> Vec<f64> {
    vec![0.5, 0.9, 0.95, 0.99, 0.999]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Explained-variance thresholds for the variance report.
    pub thresholds: Vec<f64>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
        }
    }
}

/// Everything a run needs: training, the ensemble fixture that supplies
/// the base model and basis, and extraction settings. Missing sections and
/// keys take their defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    pub fixture: FixtureConfig,
    pub extraction: ExtractionConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cora_core::{Regime, TaskKind};

    #[test]
    fn default_round_trip() {
        let cfg = RunConfigFile::default();
        assert_eq!(RunConfigFile::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfigFile::parse(
            "[train]\nregime = \"cora_tb\"\nrank = 16\nlearning_rate = 0.003\n[train.task]\nkind = \"reverse\"\n",
        )
        .unwrap();
        assert_eq!(cfg.train.regime, Regime::CoraTb);
        assert_eq!(cfg.train.rank, 16);
        assert_eq!(cfg.train.task.kind, TaskKind::Reverse);
        assert_eq!(cfg.train.steps, TrainConfig::default().steps);
        assert_eq!(cfg.fixture, FixtureConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "bogus = 1\n",
            "[train]\nlearning_rat = 0.1\n",
            "[train.task]\nsize = 3\n",
            "[fixture.model]\nlayers = 2\n",
            "[extraction]\nmethod = \"svd\"\n",
        ] {
            assert!(RunConfigFile::parse(text).is_err(), "{text}");
        }
    }
}
