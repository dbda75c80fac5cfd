use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curve {
    Linear,
    Cosine,
}

/// A scalar that moves from `start` to `end` over a span of the run and is
/// clamped to the nearest endpoint outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub name: String,
    pub start: f64,
    pub end: f64,
    pub curve: Curve,
    /// `[t0, t1]` as fractions of the total step count.
    pub span: [f64; 2],
}

impl ScheduleSpec {
    pub fn new(name: &str, start: f64, end: f64, curve: Curve, span: [f64; 2]) -> Self {
        ScheduleSpec {
            name: name.to_string(),
            start,
            end,
            curve,
            span,
        }
    }

    pub fn constant(name: &str, v: f64) -> Self {
        ScheduleSpec::new(name, v, v, Curve::Linear, [0.0, 1.0])
    }

    pub fn validate(&self) -> Result<()> {
        let [t0, t1] = self.span;
        if !(0.0 <= t0 && t0 < t1 && t1 <= 1.0) {
            return Err(Error::invalid(format!(
                "schedule {}: span [{t0}, {t1}] must satisfy 0 <= t0 < t1 <= 1",
                self.name
            )));
        }
        if !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::invalid(format!(
                "schedule {}: non-finite endpoint",
                self.name
            )));
        }
        Ok(())
    }

    /// First and last step of the span. Endpoints are rounded to whole steps
    /// so that the boundary values are hit exactly.
    pub fn step_bounds(&self, total: u64) -> (u64, u64) {
        let s0 = (self.span[0] * total as f64).round() as u64;
        let s1 = (self.span[1] * total as f64).round() as u64;
        (s0, s1.max(s0))
    }

    /// Value at `step` of a run of `total` steps.
    pub fn value_at(&self, step: u64, total: u64) -> Result<f64> {
        if total == 0 {
            return Err(Error::invalid("total steps must be at least 1"));
        }
        if step > total {
            return Err(Error::invalid(format!("step {step} exceeds total {total}")));
        }
        let (s0, s1) = self.step_bounds(total);
        if step <= s0 && s1 > s0 {
            return Ok(self.start);
        }
        if step >= s1 {
            return Ok(self.end);
        }
        let u = (step - s0) as f64 / (s1 - s0) as f64;
        Ok(match self.curve {
            Curve::Linear => self.start + (self.end - self.start) * u,
            Curve::Cosine => self.end + (self.start - self.end) * (1.0 + (PI * u).cos()) / 2.0,
        })
    }
}

/// Linear warm-up to a base value followed by cosine decay to a floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupCosine {
    pub warmup: ScheduleSpec,
    pub decay: ScheduleSpec,
}

impl WarmupCosine {
    pub fn new(base: f64, floor: f64, warmup_fraction: f64) -> Result<Self> {
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "warm-up fraction {warmup_fraction} must lie in (0, 1)"
            )));
        }
        Ok(WarmupCosine {
            warmup: ScheduleSpec::new(
                "lr_warmup",
                0.0,
                base,
                Curve::Linear,
                [0.0, warmup_fraction],
            ),
            decay: ScheduleSpec::new(
                "lr_decay",
                base,
                floor,
                Curve::Cosine,
                [warmup_fraction, 1.0],
            ),
        })
    }

    pub fn value_at(&self, step: u64, total: u64) -> Result<f64> {
        let (_, warm_end) = self.warmup.step_bounds(total);
        if step < warm_end {
            self.warmup.value_at(step, total)
        } else {
            self.decay.value_at(step, total)
        }
    }

    pub fn warmup_end(&self, total: u64) -> u64 {
        self.warmup.step_bounds(total).1
    }
}

/// Every scheduled scalar of a pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub lr: WarmupCosine,
    pub wd: ScheduleSpec,
    pub tpt: ScheduleSpec,
    pub momentum: ScheduleSpec,
    pub mask_ratio: ScheduleSpec,
    pub mask_size: ScheduleSpec,
    pub layer_lr_decay: f64,
}

/// Values of every schedule at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValues {
    pub lr: f64,
    pub wd: f64,
    pub tpt: f64,
    pub m: f64,
    pub mask_ratio: f64,
    pub mask_size: f64,
}

impl ScheduleSet {
    pub fn validate(&self) -> Result<()> {
        for s in [
            &self.lr.warmup,
            &self.lr.decay,
            &self.wd,
            &self.tpt,
            &self.momentum,
            &self.mask_ratio,
            &self.mask_size,
        ] {
            s.validate()?;
        }
        if self.lr.warmup.end != self.lr.decay.start
            || self.lr.warmup.span[1] != self.lr.decay.span[0]
        {
            return Err(Error::invalid(
                "learning-rate warm-up and decay do not meet",
            ));
        }
        if !(self.layer_lr_decay > 0.0 && self.layer_lr_decay <= 1.0) {
            return Err(Error::invalid("layer_lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn values_at(&self, step: u64, total: u64) -> Result<ScheduleValues> {
        Ok(ScheduleValues {
            lr: self.lr.value_at(step, total)?,
            wd: self.wd.value_at(step, total)?,
            tpt: self.tpt.value_at(step, total)?,
            m: self.momentum.value_at(step, total)?,
            mask_ratio: self.mask_ratio.value_at(step, total)?,
            mask_size: self.mask_size.value_at(step, total)?,
        })
    }
}

/// Learning rate of an encoder stage under layer-wise decay: the deepest
/// stage gets `base_lr`, each stage closer to the input one more factor of
/// `decay`.
pub fn layer_lr(base_lr: f64, stage_index: usize, n_stages: usize, decay: f64) -> f64 {
    let depth_from_output = n_stages.saturating_sub(1).saturating_sub(stage_index);
    base_lr * decay.powi(depth_from_output as i32)
}
