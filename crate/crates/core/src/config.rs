//! Keyed text configuration shared by every command.
//!
//! ```toml
//! [model]
//! model_dim = 64
//! use_audio = false
//!
//! [train]
//! epochs = 50
//! tasks = "both"
//!
//! [train.loss]
//! saliency = 3.0
//!
//! [synth]
//! videos = 32
//!
//! [decode]
//! center_mode = "local_maxima"
//! ```
//!
//! Every section and key is optional; missing values take their defaults.
//! Unknown keys are rejected so that typos do not silently fall back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{BenchConfig, GradcheckConfig};
use crate::error::{Result, UmtError};
use crate::features_io::SynthSpec;
use crate::model::ModelConfig;
use crate::trainer::{DecodeConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub decode: DecodeConfig,
    pub gradcheck: GradcheckConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UmtError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UmtError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            UmtError::Config(m) => UmtError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| UmtError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections() {
        let c = RunConfig::from_toml_str("[model]\nmodel_dim = 64\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.model.model_dim, 64);
        assert_eq!(c.model.heads, 8);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::from_toml_str("[modle]\nx = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[model]\nmodel_dimm = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[train.loss]\nsaliencey = 1.0\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
