use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augview::augment::{AugmentConfig, AugmentParams};
use crate::augview::crop::crop_rows;
use crate::augview::mask::{patch_mask, MaskParams};
use crate::error::{Error, Result};
use crate::pointcore::{dist2, nearest_within, Match, PointCloud, Space, Vec3};

pub const N_GLOBAL: usize = 2;
pub const N_LOCAL: usize = 4;
pub const N_MASKED: usize = 2;

/// Smallest scene accepted by [`generate_views`].
pub const MIN_SCENE_POINTS: usize = 1000;

/// How one view was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub ratio: f64,
    /// Scene row the crop was centered on.
    pub center_row: usize,
    /// Center in origin (pre-augmentation) coordinates.
    pub center_origin: Vec3,
    pub params: AugmentParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    /// Index 0 is the principal view.
    pub global_views: Vec<PointCloud>,
    pub local_views: Vec<PointCloud>,
    /// One per global view, in the same order.
    pub masked_views: Vec<(PointCloud, Vec<bool>)>,
    pub global_records: Vec<ViewRecord>,
    pub local_records: Vec<ViewRecord>,
}

impl ViewSet {
    /// Checks counts, masked/global alignment and the center constraint.
    pub fn validate(&self, radius: f64) -> Result<()> {
        if self.global_views.len() != N_GLOBAL
            || self.local_views.len() != N_LOCAL
            || self.masked_views.len() != N_MASKED
            || self.global_records.len() != N_GLOBAL
            || self.local_records.len() != N_LOCAL
        {
            return Err(Error::Data(
                "view counts do not match 2 global, 4 local, 2 masked".into(),
            ));
        }
        for (i, (g, (m, mask))) in self.global_views.iter().zip(&self.masked_views).enumerate() {
            if m.len() != g.len() || mask.len() != g.len() || m.origin_index != g.origin_index {
                return Err(Error::Data(format!(
                    "masked view {i} does not align with global view {i}"
                )));
            }
            let k = mask.iter().filter(|&&b| b).count();
            if k == 0 || k == mask.len() {
                return Err(Error::Data(format!(
                    "masked view {i} has mask fraction outside (0, 1)"
                )));
            }
        }
        let principal = &self.global_views[0];
        let r2 = radius * radius;
        let inside = |c: Vec3| principal.origin_coord.iter().any(|&p| dist2(p, c) <= r2);
        for rec in self.global_records[1..].iter().chain(&self.local_records) {
            if !inside(rec.center_origin) {
                return Err(Error::Data(format!(
                    "view center {:?} lies outside the principal view",
                    rec.center_origin
                )));
            }
        }
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &ViewRecord> {
        self.global_records.iter().chain(&self.local_records)
    }
}

fn draw_ratio(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] < range[1] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn make_view(
    scene: &PointCloud,
    cfg: &AugmentConfig,
    ratio: f64,
    center_row: usize,
    spatial_seed: u64,
    photometric_seed: u64,
) -> Result<(PointCloud, ViewRecord)> {
    let rows = crop_rows(scene, ratio, center_row)?;
    let cropped = scene.select(&rows);
    let c = scene.coord[center_row];
    let params = AugmentParams::draw(cfg, [c[0], c[1], 0.0], spatial_seed, photometric_seed);
    let view = params.apply(&cropped);
    let record = ViewRecord {
        ratio,
        center_row,
        center_origin: scene.origin_coord[center_row],
        params,
    };
    Ok((view, record))
}

/// Two global, four local and two masked views of `scene`, fully determined
/// by `rng_seed`.
///
/// The principal view is centered on a uniformly drawn scene point; every other
/// crop is centered on a uniformly drawn member of the principal view. Both
/// global views share one photometric draw; spatial parameters are drawn per
/// view, and locals draw their own photometric parameters.
pub fn generate_views(
    scene: &PointCloud,
    cfg: &AugmentConfig,
    mask_params: &MaskParams,
    rng_seed: u64,
) -> Result<ViewSet> {
    if scene.len() < MIN_SCENE_POINTS {
        return Err(Error::invalid(format!(
            "scene has {} points, at least {MIN_SCENE_POINTS} required",
            scene.len()
        )));
    }
    generate_views_unchecked(scene, cfg, mask_params, rng_seed)
}

/// [`generate_views`] without the minimum scene size, for tiny test scenes.
pub fn generate_views_unchecked(
    scene: &PointCloud,
    cfg: &AugmentConfig,
    mask_params: &MaskParams,
    rng_seed: u64,
) -> Result<ViewSet> {
    if scene.len() < 2 {
        return Err(Error::invalid("scene needs at least 2 points"));
    }
    cfg.validate()?;
    mask_params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let shared_photometric = rng.next_u64();
    let mut global_views = Vec::with_capacity(N_GLOBAL);
    let mut global_records = Vec::with_capacity(N_GLOBAL);

    let ratio = draw_ratio(&mut rng, cfg.global_ratio);
    let center = rng.random_range(0..scene.len());
    let principal_rows = crop_rows(scene, ratio, center)?;
    let (v, r) = make_view(
        scene,
        cfg,
        ratio,
        center,
        rng.next_u64(),
        shared_photometric,
    )?;
    global_views.push(v);
    global_records.push(r);

    for _ in 1..N_GLOBAL {
        let ratio = draw_ratio(&mut rng, cfg.global_ratio);
        let center = principal_rows[rng.random_range(0..principal_rows.len())];
        let (v, r) = make_view(
            scene,
            cfg,
            ratio,
            center,
            rng.next_u64(),
            shared_photometric,
        )?;
        global_views.push(v);
        global_records.push(r);
    }

    let mut local_views = Vec::with_capacity(N_LOCAL);
    let mut local_records = Vec::with_capacity(N_LOCAL);
    for _ in 0..N_LOCAL {
        let ratio = draw_ratio(&mut rng, cfg.local_ratio);
        let center = principal_rows[rng.random_range(0..principal_rows.len())];
        let (spatial, photometric) = (rng.next_u64(), rng.next_u64());
        let (v, r) = make_view(scene, cfg, ratio, center, spatial, photometric)?;
        local_views.push(v);
        local_records.push(r);
    }

    let jitter = (mask_params.masked_jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, mask_params.masked_jitter_sigma).expect("sigma validated"));
    let mut masked_views = Vec::with_capacity(N_MASKED);
    for g in global_views.iter().take(N_MASKED) {
        let mut mrng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let mask = patch_mask(g, mask_params, &mut mrng)?;
        let mut m = g.clone();
        if let Some(j) = &jitter {
            for (p, _) in m.coord.iter_mut().zip(&mask).filter(|(_, &b)| b) {
                for v in p.iter_mut() {
                    *v += j.sample(&mut mrng);
                }
            }
        }
        masked_views.push((m, mask));
    }

    Ok(ViewSet {
        global_views,
        local_views,
        masked_views,
        global_records,
        local_records,
    })
}

/// Pairs `(index in a, index in b)` by nearest neighbor in origin coordinates.
pub fn match_pairs(
    view_a: &PointCloud,
    view_b: &PointCloud,
    radius: f64,
) -> Result<Vec<(usize, usize)>> {
    Ok(nearest_within(view_a, view_b, radius, Space::Origin)?
        .into_iter()
        .map(|Match { query, target, .. }| (query, target))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_scene, SceneSpec};

    fn scene(seed: u64) -> PointCloud {
        generate_scene(&SceneSpec {
            n_points: 3000,
            seed,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let s = scene(1);
        let a = generate_views(&s, &AugmentConfig::default(), &MaskParams::default(), 9).unwrap();
        let b = generate_views(&s, &AugmentConfig::default(), &MaskParams::default(), 9).unwrap();
        assert_eq!(a, b);
        a.validate(0.05).unwrap();
    }

    #[test]
    fn rejects_small_scene() {
        let s = scene(1).select(&(0..999).collect::<Vec<_>>());
        assert!(generate_views(&s, &AugmentConfig::default(), &MaskParams::default(), 0).is_err());
    }

    #[test]
    fn shared_photometric_inverts_to_same_colors() {
        let s = scene(2);
        let vs = generate_views(&s, &AugmentConfig::default(), &MaskParams::default(), 4).unwrap();
        let p0 = vs.global_records[0].params.photometric;
        let p1 = vs.global_records[1].params.photometric;
        assert_eq!(p0, p1);
        let mut by_origin = std::collections::HashMap::new();
        for (g, rec) in vs.global_views.iter().zip(&vs.global_records) {
            for (i, c) in g.color.as_ref().unwrap().iter().enumerate() {
                let raw = rec.params.photometric.invert(*c);
                let prev = by_origin.entry(g.origin_index[i]).or_insert(raw);
                for d in 0..3 {
                    assert!((prev[d] - raw[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn masked_views_align_and_leave_unmasked_untouched() {
        let s = scene(3);
        let vs = generate_views(&s, &AugmentConfig::default(), &MaskParams::default(), 5).unwrap();
        for (g, (m, mask)) in vs.global_views.iter().zip(&vs.masked_views) {
            assert_eq!(g.origin_index, m.origin_index);
            let frac = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
            assert!(frac > 0.0 && frac < 1.0);
            for i in 0..g.len() {
                if !mask[i] {
                    assert_eq!(g.coord[i], m.coord[i]);
                }
            }
        }
    }

    #[test]
    fn unaugmented_crops_match_shared_origins() {
        let s = scene(4);
        let a = crate::augview::crop(&s, 0.6, 10).unwrap();
        let b = crate::augview::crop(&s, 0.6, 2000).unwrap();
        let pairs = match_pairs(&a, &b, 0.05).unwrap();
        for (i, j) in pairs {
            let shared = b.origin_index.contains(&a.origin_index[i]);
            if shared {
                assert_eq!(a.origin_index[i], b.origin_index[j]);
            }
        }
    }
}
