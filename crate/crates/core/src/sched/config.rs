use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sched::schedule::{Curve, ScheduleSet, ScheduleSpec, WarmupCosine};

/// Declarative schedule endpoints. Defaults are the published recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub lr_warmup_epochs: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    pub wd_curve: Curve,
    pub tpt_start: f64,
    pub tpt_end: f64,
    pub tpt_warmup_epochs: f64,
    pub momentum_start: f64,
    pub momentum_end: f64,
    pub momentum_curve: Curve,
    pub mask_ratio_start: f64,
    pub mask_ratio_end: f64,
    pub mask_size_start: f64,
    pub mask_size_end: f64,
    /// Fraction of the run over which mask size and ratio ramp up.
    pub mask_warmup_fraction: f64,
    pub layer_lr_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            base_lr: 0.004,
            min_lr: 1e-6,
            lr_warmup_epochs: 10.0,
            wd_start: 0.04,
            wd_end: 0.2,
            wd_curve: Curve::Cosine,
            tpt_start: 0.04,
            tpt_end: 0.07,
            tpt_warmup_epochs: 10.0,
            momentum_start: 0.994,
            momentum_end: 1.0,
            momentum_curve: Curve::Cosine,
            mask_ratio_start: 0.3,
            mask_ratio_end: 0.7,
            mask_size_start: 0.1,
            mask_size_end: 0.4,
            mask_warmup_fraction: 0.05,
            layer_lr_decay: 0.9,
        }
    }
}

/// Epoch-denominated span converted to a run fraction. Runs shorter than
/// twice the span get half the run.
fn epoch_fraction(epochs: f64, total_epochs: u64) -> f64 {
    let f = epochs / total_epochs.max(1) as f64;
    f.min(0.5)
}

impl ScheduleConfig {
    /// Epoch-denominated ramps too long for a `total_epochs` run, which
    /// `build` shortens to half the run.
    pub fn clamped_ramps(&self, total_epochs: u64) -> Vec<(&'static str, f64)> {
        [
            ("lr warm-up", self.lr_warmup_epochs),
            ("tpt warm-up", self.tpt_warmup_epochs),
        ]
        .into_iter()
        .filter(|&(_, e)| e / total_epochs.max(1) as f64 > 0.5)
        .collect()
    }

    pub fn build(&self, total_epochs: u64) -> Result<ScheduleSet> {
        let set = ScheduleSet {
            lr: WarmupCosine::new(
                self.base_lr,
                self.min_lr,
                epoch_fraction(self.lr_warmup_epochs, total_epochs),
            )?,
            wd: ScheduleSpec::new("wd", self.wd_start, self.wd_end, self.wd_curve, [0.0, 1.0]),
            tpt: ScheduleSpec::new(
                "tpt",
                self.tpt_start,
                self.tpt_end,
                Curve::Linear,
                [0.0, epoch_fraction(self.tpt_warmup_epochs, total_epochs)],
            ),
            momentum: ScheduleSpec::new(
                "momentum",
                self.momentum_start,
                self.momentum_end,
                self.momentum_curve,
                [0.0, 1.0],
            ),
            mask_ratio: ScheduleSpec::new(
                "mask_ratio",
                self.mask_ratio_start,
                self.mask_ratio_end,
                Curve::Linear,
                [0.0, self.mask_warmup_fraction],
            ),
            mask_size: ScheduleSpec::new(
                "mask_size",
                self.mask_size_start,
                self.mask_size_end,
                Curve::Linear,
                [0.0, self.mask_warmup_fraction],
            ),
            layer_lr_decay: self.layer_lr_decay,
        };
        set.validate()?;
        Ok(set)
    }
}
