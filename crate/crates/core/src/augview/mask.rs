use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcore::{voxel_groups, PointCloud};

/// Patch-masking parameters for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Edge of the cubic mask cells, meters.
    pub mask_size: f64,
    /// Minimum fraction of points to mask.
    pub mask_ratio: f64,
    /// Extra coordinate jitter applied to masked points.
    pub masked_jitter_sigma: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            mask_size: 0.1,
            mask_ratio: 0.3,
            masked_jitter_sigma: 0.01,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "mask_ratio {} outside (0, 1)",
                self.mask_ratio
            )));
        }
        if !(self.mask_size > 0.0) || !self.mask_size.is_finite() {
            return Err(Error::invalid(format!(
                "mask_size {} must be positive",
                self.mask_size
            )));
        }
        if !(self.masked_jitter_sigma >= 0.0) {
            return Err(Error::invalid("masked_jitter_sigma must be non-negative"));
        }
        Ok(())
    }
}

/// Masks whole grid cells of edge `mask_size`, visiting cells in random order
/// and stopping as soon as the masked fraction reaches `mask_ratio`.
pub fn patch_mask(view: &PointCloud, params: &MaskParams, rng: &mut impl Rng) -> Result<Vec<bool>> {
    params.validate()?;
    if view.is_empty() {
        return Err(Error::invalid("cannot mask an empty view"));
    }
    let mut cells = voxel_groups(&view.coord, params.mask_size);
    cells.shuffle(rng);
    let target = params.mask_ratio * view.len() as f64;
    let mut mask = vec![false; view.len()];
    let mut masked = 0usize;
    for (_, members) in &cells {
        for &i in members {
            mask[i] = true;
        }
        masked += members.len();
        if masked as f64 >= target {
            break;
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, extent: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_coords(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(0.0..extent),
                        rng.random_range(0.0..extent),
                        rng.random_range(0.0..extent),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn tiny_ratio_masks_one_cell() {
        let pc = uniform(5000, 4.0, 1);
        let p = MaskParams {
            mask_size: 0.5,
            mask_ratio: 1e-9,
            masked_jitter_sigma: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = patch_mask(&pc, &p, &mut rng).unwrap();
        let keys: std::collections::BTreeSet<_> = pc
            .coord
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| {
                [
                    (c[0] / 0.5).floor() as i64,
                    (c[1] / 0.5).floor() as i64,
                    (c[2] / 0.5).floor() as i64,
                ]
            })
            .collect();
        assert_eq!(keys.len(), 1);
    }

    #[test]
    fn single_cell_masks_everything() {
        let pc = uniform(200, 0.05, 3);
        let p = MaskParams {
            mask_size: 1.0,
            mask_ratio: 0.3,
            masked_jitter_sigma: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(patch_mask(&pc, &p, &mut rng).unwrap().iter().all(|&m| m));
    }

    #[test]
    fn uniform_scene_fraction_near_ratio() {
        let pc = uniform(50_000, 4.0, 5);
        let p = MaskParams {
            mask_size: 0.4,
            mask_ratio: 0.7,
            masked_jitter_sigma: 0.01,
        };
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = patch_mask(&pc, &p, &mut rng).unwrap();
            let frac = mask.iter().filter(|&&m| m).count() as f64 / pc.len() as f64;
            assert!((0.70..=0.72).contains(&frac), "fraction {frac}");
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let pc = uniform(10, 1.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (size, ratio) in [(0.0, 0.5), (0.1, 0.0), (0.1, 1.0)] {
            let p = MaskParams {
                mask_size: size,
                mask_ratio: ratio,
                masked_jitter_sigma: 0.0,
            };
            assert!(patch_mask(&pc, &p, &mut rng).is_err());
        }
    }
}
