use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augview::AugmentConfig;
use crate::distill::HeadConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::probe::ProbeConfig;
use crate::sched::{AdamWConfig, ScheduleConfig};
use crate::synthgen::SceneSpec;
use crate::trainer::{MaskingConfig, TrainConfig};

/// Synthetic dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Base scene; each scene jitters the room extent and draws its own seed.
    pub scene: SceneSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Directory holding `train.ptc` and `test.ptc`.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scene: SceneSpec::default(),
            n_train: 64,
            n_test: 16,
            seed: 7,
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub total_epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub max_steps: Option<u64>,
    pub optimizer: AdamWConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            total_epochs: t.total_epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            log_every: t.log_every,
            max_steps: t.max_steps,
            optimizer: t.optimizer,
        }
    }
}

/// The JSON run description. Every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub views: AugmentConfig,
    pub masking: MaskingConfig,
    pub schedules: ScheduleConfig,
    pub train: TrainSection,
    pub probe: ProbeConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigFile::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_epochs: self.train.total_epochs,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            log_every: self.train.log_every,
            max_steps: self.train.max_steps,
            optimizer: self.train.optimizer,
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            views: self.views.clone(),
            masking: self.masking.clone(),
            schedules: self.schedules.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = ConfigFile::parse(r#"{"train": {"batch_size": 2, "epochz": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = ConfigFile::parse(r#"{"extra": {}}"#).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn missing_keys_take_defaults() {
        let c = ConfigFile::parse(r#"{"head": {"n_prototypes": 32}}"#).unwrap();
        assert_eq!(c.head.n_prototypes, 32);
        assert_eq!(c.head.hidden_dim, HeadConfig::default().hidden_dim);
        assert_eq!(c.train_config().batch_size, 4);
        assert_eq!(c.data.n_train, 64);
    }

    #[test]
    fn echo_round_trips() {
        let c = ConfigFile::default();
        assert_eq!(ConfigFile::parse(&c.to_json()).unwrap(), c);
    }
}
