use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Residual blocks per stage.
    pub depths: Vec<usize>,
    /// Feature channels per stage, strictly increasing.
    pub widths: Vec<usize>,
    /// Grid edge of stage 0 in meters; stage `s` uses `base_grid * grid_growth^s`.
    pub base_grid: f64,
    pub grid_growth: f64,
    /// Neighborhood cell edge as a multiple of the stage grid.
    pub neighbor_radius_factor: f64,
    /// Number of up-cast steps applied to the deepest stage for distillation.
    pub upcast_k: usize,
    /// Hidden width of each block MLP relative to the stage width.
    pub mlp_ratio: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            depths: vec![1, 1, 1, 2, 1],
            widths: vec![24, 48, 96, 192, 256],
            base_grid: 0.05,
            grid_growth: 2.0,
            neighbor_radius_factor: 2.5,
            upcast_k: 2,
            mlp_ratio: 2.0,
        }
    }
}

impl EncoderConfig {
    pub fn n_stages(&self) -> usize {
        self.widths.len()
    }

    pub fn grid(&self, stage: usize) -> f64 {
        self.base_grid * self.grid_growth.powi(stage as i32)
    }

    pub fn hidden(&self, stage: usize) -> usize {
        ((self.widths[stage] as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() > 5 {
            return Err(Error::Config(format!(
                "encoder needs 1 to 5 stages, got {}",
                self.widths.len()
            )));
        }
        if self.depths.len() != self.widths.len() {
            return Err(Error::Config(format!(
                "depths has {} entries but widths has {}",
                self.depths.len(),
                self.widths.len()
            )));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "widths {:?} must be positive and strictly increasing",
                self.widths
            )));
        }
        if !(self.base_grid > 0.0 && self.base_grid.is_finite()) {
            return Err(Error::Config("base_grid must be positive".into()));
        }
        if !(self.grid_growth > 1.0 && self.grid_growth.is_finite()) {
            return Err(Error::Config("grid_growth must exceed 1".into()));
        }
        if !(self.neighbor_radius_factor > 0.0 && self.neighbor_radius_factor.is_finite()) {
            return Err(Error::Config(
                "neighbor_radius_factor must be positive".into(),
            ));
        }
        if self.upcast_k > 4 || self.upcast_k >= self.n_stages() {
            return Err(Error::Config(format!(
                "upcast_k {} must be below the stage count {} and at most 4",
                self.upcast_k,
                self.n_stages()
            )));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Stage whose resolution the up-cast features live at.
    pub fn upcast_stage(&self) -> usize {
        self.n_stages() - 1 - self.upcast_k
    }
}
