use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augview::{AugmentConfig, MaskParams};
use crate::distill::HeadConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::sched::{AdamWConfig, ScheduleConfig, ScheduleValues};

/// Masking settings that are not scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub masked_jitter_sigma: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            masked_jitter_sigma: 0.01,
        }
    }
}

impl MaskingConfig {
    pub fn params(&self, v: &ScheduleValues) -> MaskParams {
        MaskParams {
            mask_size: v.mask_size,
            mask_ratio: v.mask_ratio,
            masked_jitter_sigma: self.masked_jitter_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_epochs: u64,
    /// Scenes per optimization step.
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Keep every this many metric records (the final step is always kept).
    pub log_every: u64,
    /// Stop after this many steps without shortening the schedules.
    pub max_steps: Option<u64>,
    pub optimizer: AdamWConfig,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub views: AugmentConfig,
    pub masking: MaskingConfig,
    pub schedules: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_epochs: 200,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
            max_steps: None,
            optimizer: AdamWConfig::default(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            views: AugmentConfig::default(),
            masking: MaskingConfig::default(),
            schedules: ScheduleConfig::default(),
        }
    }
}

/// The fields that determine a training trajectory.
#[derive(Serialize)]
struct Trajectory<'a> {
    n_scenes: usize,
    total_epochs: u64,
    batch_size: usize,
    seed: u64,
    optimizer: &'a AdamWConfig,
    encoder: &'a EncoderConfig,
    head: &'a HeadConfig,
    views: &'a AugmentConfig,
    masking: &'a MaskingConfig,
    schedules: &'a ScheduleConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if !(self.masking.masked_jitter_sigma >= 0.0) {
            return Err(Error::Config(
                "masked_jitter_sigma must be non-negative".into(),
            ));
        }
        self.encoder.validate()?;
        self.head.validate()?;
        self.views
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.schedules.build(self.total_epochs)?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_scenes: usize) -> u64 {
        n_scenes.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_scenes: usize) -> u64 {
        self.total_epochs * self.steps_per_epoch(n_scenes)
    }

    /// Step count the schedules are stretched over: the last step sits at
    /// the end of every schedule.
    pub fn schedule_horizon(&self, n_scenes: usize) -> u64 {
        self.total_steps(n_scenes).saturating_sub(1).max(1)
    }

    /// Scheduled values at `step` of a run over `n_scenes` scenes.
    pub fn schedule_at(&self, step: u64, n_scenes: usize) -> Result<ScheduleValues> {
        let last = self.schedule_horizon(n_scenes);
        self.schedules
            .build(self.total_epochs)?
            .values_at(step.min(last), last)
    }

    /// SHA-256 over everything that shapes the trajectory; stopping point and
    /// logging cadence are excluded.
    pub fn hash(&self, n_scenes: usize) -> String {
        let t = Trajectory {
            n_scenes,
            total_epochs: self.total_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: &self.optimizer,
            encoder: &self.encoder,
            head: &self.head,
            views: &self.views,
            masking: &self.masking,
            schedules: &self.schedules,
        };
        let json = serde_json::to_string(&t).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
