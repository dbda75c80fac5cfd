use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::sched::schedule::layer_lr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_grad_norm: None,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &ParamSet, cfg: AdamWConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        AdamW {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. Each parameter's rate is `layer_lr(lr, stage, ..)`
    /// for encoder stages and `lr` otherwise; weight decay only touches
    /// parameters flagged for it. Missing gradients count as zero.
    pub fn update(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Tensor>],
        lr: f64,
        wd: f64,
        n_stages: usize,
        layer_decay: f64,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(Error::shape(
                        "optimizer_step",
                        format!(
                            "{}: grad {:?} vs param {:?}",
                            p.name,
                            g.shape(),
                            p.value.shape()
                        ),
                    ));
                }
                if !g.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {}",
                        p.name
                    )));
                }
            }
        }
        let clip = match self.cfg.clip_grad_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flatten()
                    .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let rate = match p.stage {
                Some(s) => layer_lr(lr, s, n_stages, layer_decay),
                None => lr,
            };
            let shrink = if p.decay { 1.0 - rate * wd } else { 1.0 };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let g = grads[k].as_ref().map(Tensor::data);
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i] * clip);
                *x *= shrink;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *x -= rate * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
