use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcore::{PointCloud, Vec3};

/// Ranges the per-view augmentations are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub global_ratio: [f64; 2],
    pub local_ratio: [f64; 2],
    pub scale: [f64; 2],
    pub flip_prob: f64,
    pub coord_jitter_sigma: f64,
    /// Lower bound of the per-channel contrast factor (upper bound is 1).
    pub min_contrast: f64,
    /// Radius used when checking that view centers fall inside the
    /// principal view.
    pub center_radius: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            global_ratio: [0.4, 1.0],
            local_ratio: [0.05, 0.4],
            scale: [0.9, 1.1],
            flip_prob: 0.5,
            coord_jitter_sigma: 0.005,
            min_contrast: 0.8,
            center_radius: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("global_ratio", self.global_ratio),
            ("local_ratio", self.local_ratio),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1] <= 1.0) {
                return Err(Error::invalid(format!(
                    "{name} range {r:?} must lie in (0, 1]"
                )));
            }
        }
        if !(self.scale[0] > 0.0 && self.scale[0] <= self.scale[1]) {
            return Err(Error::invalid("scale range must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must lie in [0, 1]"));
        }
        if !(self.coord_jitter_sigma >= 0.0) {
            return Err(Error::invalid("coord_jitter_sigma must be non-negative"));
        }
        if !(self.min_contrast > 0.0 && self.min_contrast <= 1.0) {
            return Err(Error::invalid("min_contrast must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Per-channel affine color map `c' = 0.5 + contrast (c - 0.5) + brightness`.
///
/// Brightness is bounded by `(1 - contrast) / 2`, so `[0, 1]` maps into itself
/// and the map is invertible without clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub contrast: Vec3,
    pub brightness: Vec3,
}

impl Photometric {
    pub fn identity() -> Self {
        Photometric {
            contrast: [1.0; 3],
            brightness: [0.0; 3],
        }
    }

    pub fn sample(rng: &mut impl Rng, min_contrast: f64) -> Self {
        let mut contrast = [1.0; 3];
        let mut brightness = [0.0; 3];
        for d in 0..3 {
            contrast[d] = if min_contrast < 1.0 {
                rng.random_range(min_contrast..1.0)
            } else {
                1.0
            };
            let slack = (1.0 - contrast[d]) / 2.0;
            brightness[d] = if slack > 0.0 {
                rng.random_range(-slack..slack)
            } else {
                0.0
            };
        }
        Photometric {
            contrast,
            brightness,
        }
    }

    pub fn apply(&self, c: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for d in 0..3 {
            out[d] = (0.5 + self.contrast[d] * (c[d] - 0.5) + self.brightness[d]).clamp(0.0, 1.0);
        }
        out
    }

    pub fn invert(&self, c: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for d in 0..3 {
            out[d] = (c[d] - 0.5 - self.brightness[d]) / self.contrast[d] + 0.5;
        }
        out
    }
}

/// Rigid-plus-scale map about a pivot, followed by Gaussian coordinate jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spatial {
    pub rotation_z: f64,
    pub flip_x: bool,
    pub flip_y: bool,
    pub scale: f64,
    pub pivot: Vec3,
}

impl Spatial {
    pub fn identity() -> Self {
        Spatial {
            rotation_z: 0.0,
            flip_x: false,
            flip_y: false,
            scale: 1.0,
            pivot: [0.0; 3],
        }
    }

    fn orient(&self, v: Vec3) -> Vec3 {
        let (s, c) = self.rotation_z.sin_cos();
        let mut out = [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
        if self.flip_x {
            out[0] = -out[0];
        }
        if self.flip_y {
            out[1] = -out[1];
        }
        out
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        let centered = [
            p[0] - self.pivot[0],
            p[1] - self.pivot[1],
            p[2] - self.pivot[2],
        ];
        let o = self.orient(centered);
        [o[0] * self.scale, o[1] * self.scale, o[2] * self.scale]
    }

    pub fn apply_normal(&self, n: Vec3) -> Vec3 {
        self.orient(n)
    }
}

/// Everything needed to replay one view's augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub spatial: Spatial,
    pub photometric: Photometric,
    pub coord_jitter_sigma: f64,
    pub photometric_seed: u64,
    pub spatial_seed: u64,
}

impl AugmentParams {
    /// Draws spatial parameters from `spatial_seed` and photometric ones
    /// from `photometric_seed`; views sharing a photometric seed share the
    /// color transform exactly.
    pub fn draw(
        cfg: &AugmentConfig,
        pivot: Vec3,
        spatial_seed: u64,
        photometric_seed: u64,
    ) -> Self {
        let mut srng = ChaCha8Rng::seed_from_u64(spatial_seed);
        let spatial = Spatial {
            rotation_z: srng.random_range(0.0..2.0 * PI),
            flip_x: srng.random_bool(cfg.flip_prob),
            flip_y: srng.random_bool(cfg.flip_prob),
            scale: if cfg.scale[0] < cfg.scale[1] {
                srng.random_range(cfg.scale[0]..=cfg.scale[1])
            } else {
                cfg.scale[0]
            },
            pivot,
        };
        let mut prng = ChaCha8Rng::seed_from_u64(photometric_seed);
        let photometric = Photometric::sample(&mut prng, cfg.min_contrast);
        AugmentParams {
            spatial,
            photometric,
            coord_jitter_sigma: cfg.coord_jitter_sigma,
            photometric_seed,
            spatial_seed,
        }
    }

    /// Applies the augmentation to current coordinates, normals and colors.
    /// Origin fields are untouched.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        // Jitter continues the spatial stream past the parameter draws.
        let mut jrng = ChaCha8Rng::seed_from_u64(self.spatial_seed ^ 0x6a09_e667_f3bc_c908);
        let jitter = (self.coord_jitter_sigma > 0.0)
            .then(|| Normal::new(0.0, self.coord_jitter_sigma).expect("sigma validated"));
        for p in out.coord.iter_mut() {
            let mut q = self.spatial.apply_point(*p);
            if let Some(j) = &jitter {
                for v in q.iter_mut() {
                    *v += j.sample(&mut jrng);
                }
            }
            *p = q;
        }
        if let Some(normals) = out.normal.as_mut() {
            for n in normals.iter_mut() {
                *n = self.spatial.apply_normal(*n);
            }
        }
        if let Some(colors) = out.color.as_mut() {
            for c in colors.iter_mut() {
                *c = self.photometric.apply(*c);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn photometric_inverts_and_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Photometric::sample(&mut rng, 0.8);
            for c in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.3, 0.6, 0.9]] {
                let y = p.apply(c);
                assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
                let back = p.invert(y);
                for d in 0..3 {
                    assert!((back[d] - c[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spatial_preserves_normal_length() {
        let s = Spatial {
            rotation_z: 1.1,
            flip_x: true,
            flip_y: false,
            scale: 1.07,
            pivot: [1.0, 2.0, 0.0],
        };
        let n = s.apply_normal([0.6, 0.0, 0.8]);
        assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-12);
        let p = s.apply_point([1.0, 2.0, 0.0]);
        assert_eq!(p, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn same_seeds_same_params() {
        let cfg = AugmentConfig::default();
        let a = AugmentParams::draw(&cfg, [0.0; 3], 5, 6);
        let b = AugmentParams::draw(&cfg, [0.0; 3], 5, 6);
        assert_eq!(a, b);
        assert!(a.spatial.scale >= 0.9 && a.spatial.scale <= 1.1);
    }
}
