use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Bound, Linear, ParamSet, Tape, Tensor, Var, L2_NORMALIZE_EPS};
use crate::error::{Error, Result};

/// How teacher logits become target distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    Sinkhorn,
    /// Plain temperature softmax, no prototype balancing.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub n_prototypes: usize,
    pub student_temp: f64,
    pub koleo_weight: f64,
    pub sinkhorn_iters: usize,
    pub centering: Centering,
    /// Matching radius in units of the up-cast stage's grid edge.
    pub match_radius_factor: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden_dim: 256,
            bottleneck_dim: 64,
            n_prototypes: 256,
            student_temp: 0.1,
            koleo_weight: 0.1,
            sinkhorn_iters: 3,
            centering: Centering::Sinkhorn,
            match_radius_factor: 1.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_prototypes < 2 {
            return Err(Error::Config("n_prototypes must be at least 2".into()));
        }
        if self.hidden_dim == 0 || self.bottleneck_dim == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if !(self.student_temp > 0.0 && self.student_temp.is_finite()) {
            return Err(Error::Config("student_temp must be positive".into()));
        }
        if !(self.koleo_weight >= 0.0 && self.koleo_weight.is_finite()) {
            return Err(Error::Config("koleo_weight must be non-negative".into()));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::Config("sinkhorn_iters must be at least 1".into()));
        }
        if !(self.match_radius_factor > 0.0 && self.match_radius_factor.is_finite()) {
            return Err(Error::Config("match_radius_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Projection MLP plus prototype matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
    pub prototypes: usize,
}

pub const PROTOTYPES: &str = "head.prototypes";

impl Head {
    pub fn init(
        cfg: &HeadConfig,
        in_dim: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Head> {
        cfg.validate()?;
        let fc1 = Linear::init(params, "head.fc1", in_dim, cfg.hidden_dim, None, rng);
        let fc2 = Linear::init(
            params,
            "head.fc2",
            cfg.hidden_dim,
            cfg.bottleneck_dim,
            None,
            rng,
        );
        let dist = Normal::new(0.0, 1.0).expect("unit std");
        let k = cfg.n_prototypes * cfg.bottleneck_dim;
        let protos = Tensor::new(
            cfg.n_prototypes,
            cfg.bottleneck_dim,
            (0..k).map(|_| dist.sample(rng)).collect(),
        )?;
        let prototypes = params.insert(PROTOTYPES, protos, None, false);
        Ok(Head {
            fc1,
            fc2,
            prototypes,
        })
    }

    pub fn bind(params: &ParamSet) -> Result<Head> {
        Ok(Head {
            fc1: Linear::bind(params, "head.fc1")?,
            fc2: Linear::bind(params, "head.fc2")?,
            prototypes: params.id(PROTOTYPES)?,
        })
    }
}

/// Cosine similarity of each projected feature row to every prototype (N x K).
pub fn head_forward(tape: &mut Tape, bound: &Bound, head: &Head, features: Var) -> Result<Var> {
    let h = head.fc1.forward(tape, bound, features)?;
    let h = tape.gelu(h);
    let z = head.fc2.forward(tape, bound, h)?;
    let z = tape.l2_normalize(z, 1, L2_NORMALIZE_EPS)?;
    let p = tape.l2_normalize(bound.var(head.prototypes), 1, L2_NORMALIZE_EPS)?;
    let pt = tape.transpose(p);
    tape.matmul(z, pt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(in_dim: usize) -> (Head, ParamSet) {
        let cfg = HeadConfig {
            hidden_dim: 16,
            bottleneck_dim: 8,
            n_prototypes: 12,
            ..HeadConfig::default()
        };
        let mut p = ParamSet::new();
        let head = Head::init(&cfg, in_dim, &mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (head, p)
    }

    #[test]
    fn logits_are_bounded_cosines() {
        let (head, p) = setup(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(
            10_000,
            10,
            (0..100_000).map(|_| rng.random_range(-5.0..5.0)).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, &p, false);
        let xv = tape.constant(x);
        let l = head_forward(&mut tape, &b, &head, xv).unwrap();
        assert_eq!(tape.value(l).shape(), [10_000, 12]);
        assert!(tape.value(l).data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn aligned_prototype_scores_one() {
        let (head, mut p) = setup(4);
        let x = Tensor::from_rows(&[[0.3, -0.2, 0.9, 0.1]]).unwrap();
        // Compute the projection, then copy it into prototype row 5.
        let z = {
            let mut tape = Tape::new();
            let b = Bound::new(&mut tape, &p, false);
            let xv = tape.constant(x.clone());
            let h = head.fc1.forward(&mut tape, &b, xv).unwrap();
            let h = tape.gelu(h);
            let z = head.fc2.forward(&mut tape, &b, h).unwrap();
            tape.value(z).clone()
        };
        p.get_mut(head.prototypes)
            .value
            .row_mut(5)
            .copy_from_slice(z.row(0));
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, &p, false);
        let xv = tape.constant(x);
        let l = head_forward(&mut tape, &b, &head, xv).unwrap();
        let row = tape.value(l).row(0).to_vec();
        assert!((row[5] - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v <= row[5]));
    }
}
