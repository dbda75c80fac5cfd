use crate::error::{Error, Result};
use crate::pointcore::{dist2, PointCloud};

/// Crop sizes are computed against at most this many points.
pub const MAX_CROP_POINTS: usize = 1 << 16;

/// Number of points a crop of `ratio` keeps from an `n`-point cloud.
pub fn crop_size(n: usize, ratio: f64) -> usize {
    let k = (ratio * n.min(MAX_CROP_POINTS) as f64).ceil() as usize;
    k.clamp(1, n)
}

/// Rows of the `k` points nearest (in current coordinates) to row `center`,
/// ascending by row. Equal distances resolve to the smaller row.
pub fn crop_rows(cloud: &PointCloud, ratio: f64, center: usize) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("crop ratio {ratio} outside (0, 1]")));
    }
    if center >= cloud.len() {
        return Err(Error::invalid(format!(
            "crop center {center} out of range for {} points",
            cloud.len()
        )));
    }
    let k = crop_size(cloud.len(), ratio);
    let c = cloud.coord[center];
    let mut keyed: Vec<(f64, usize)> = cloud.coord.iter().map(|&p| dist2(p, c)).zip(0..).collect();
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.truncate(k);
    }
    let mut rows: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    rows.sort_unstable();
    Ok(rows)
}

/// kNN crop around `cloud.coord[center_index]` keeping
/// `ceil(ratio * min(N, 65536))` points; origin fields are carried along.
pub fn crop(cloud: &PointCloud, ratio: f64, center_index: usize) -> Result<PointCloud> {
    Ok(cloud.select(&crop_rows(cloud, ratio, center_index)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_coords(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(0.0..5.0),
                        rng.random_range(0.0..5.0),
                        rng.random_range(0.0..3.0),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn full_ratio_keeps_everything() {
        let pc = cloud(1000, 1);
        assert_eq!(crop(&pc, 1.0, 17).unwrap().len(), 1000);
    }

    #[test]
    fn ratio_applies_to_capped_size() {
        assert_eq!(crop_size(100_000, 0.4), 26215);
        let pc = cloud(100_000, 2);
        assert_eq!(crop(&pc, 0.4, 0).unwrap().len(), 26215);
    }

    #[test]
    fn matches_full_sort() {
        let pc = cloud(3000, 3);
        for center in [0, 1234, 2999] {
            let got = crop_rows(&pc, 0.05, center).unwrap();
            let c = pc.coord[center];
            let mut all: Vec<(f64, usize)> = pc
                .coord
                .iter()
                .enumerate()
                .map(|(i, &p)| (dist2(p, c), i))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut expect: Vec<usize> = all[..crop_size(3000, 0.05)].iter().map(|x| x.1).collect();
            expect.sort_unstable();
            assert_eq!(got, expect);
            assert!(got.contains(&center));
        }
    }

    #[test]
    fn rejects_bad_ratio_and_center() {
        let pc = cloud(10, 4);
        assert!(crop(&pc, 0.0, 0).is_err());
        assert!(crop(&pc, 1.5, 0).is_err());
        assert!(crop(&pc, 0.5, 10).is_err());
    }
}
