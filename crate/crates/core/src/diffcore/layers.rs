use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Bound, ParamSet, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::Result;

/// Affine map `x W + b` stored as `<name>.w` (in x out) and `<name>.b` (1 x out).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    /// Gaussian weights with variance `1 / fan_in`, zero bias. Only the weight
    /// is subject to weight decay.
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        stage: Option<usize>,
        rng: &mut impl Rng,
    ) -> Linear {
        let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        let w = Tensor::new(fan_in, fan_out, data).expect("sized");
        Linear {
            w: params.insert(format!("{name}.w"), w, stage, true),
            b: params.insert(format!("{name}.b"), Tensor::zeros(1, fan_out), stage, false),
        }
    }

    pub fn bind(params: &ParamSet, name: &str) -> Result<Linear> {
        Ok(Linear {
            w: params.id(&format!("{name}.w"))?,
            b: params.id(&format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.w))?;
        tape.add_row(y, bound.var(self.b))
    }

    pub fn fan_out(&self, params: &ParamSet) -> usize {
        params.get(self.w).value.cols()
    }
}

/// Row-wise layer normalization with learned gain `<name>.g` and shift `<name>.b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub g: usize,
    pub b: usize,
}

impl Norm {
    pub fn init(params: &mut ParamSet, name: &str, dim: usize, stage: Option<usize>) -> Norm {
        Norm {
            g: params.insert(
                format!("{name}.g"),
                Tensor::filled(1, dim, 1.0),
                stage,
                false,
            ),
            b: params.insert(format!("{name}.b"), Tensor::zeros(1, dim), stage, false),
        }
    }

    pub fn bind(params: &ParamSet, name: &str) -> Result<Norm> {
        Ok(Norm {
            g: params.id(&format!("{name}.g"))?,
            b: params.id(&format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.layer_norm(x, 1, LAYER_NORM_EPS)?;
        let y = tape.mul_row(y, bound.var(self.g))?;
        tape.add_row(y, bound.var(self.b))
    }
}
