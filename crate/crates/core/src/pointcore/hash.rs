use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::pointcore::cloud::{dist2, PointCloud, Space, Vec3};
use crate::pointcore::grid::voxel_key;

/// Uniform-grid bucket index over point rows.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    pub cell_size: f64,
    pub table: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialHash {
    pub fn from_coords(coords: &[Vec3], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::invalid(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        let mut table: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, &c) in coords.iter().enumerate() {
            table.entry(voxel_key(c, cell_size)).or_default().push(i);
        }
        Ok(SpatialHash { cell_size, table })
    }

    pub fn key_of(&self, c: Vec3) -> [i64; 3] {
        voxel_key(c, self.cell_size)
    }

    pub fn cell(&self, key: [i64; 3]) -> &[usize] {
        self.table.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Candidate rows from the 3x3x3 block of cells around `c`.
    pub fn neighborhood(&self, c: Vec3) -> impl Iterator<Item = usize> + '_ {
        let k = self.key_of(c);
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).flat_map(move |dz| {
                    self.cell([k[0] + dx, k[1] + dy, k[2] + dz]).iter().copied()
                })
            })
        })
    }
}

/// Buckets the current coordinates of a cloud.
pub fn build_hash(cloud: &PointCloud, cell_size: f64) -> Result<SpatialHash> {
    SpatialHash::from_coords(&cloud.coord, cell_size)
}

/// One query-to-target correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query: usize,
    pub target: usize,
    pub distance: f64,
}

/// For each query row, the nearest target row within `radius` (ties go to the
/// smaller target index). Query rows with nothing in range are skipped.
pub fn nearest_within(
    query: &PointCloud,
    target: &PointCloud,
    radius: f64,
    space: Space,
) -> Result<Vec<Match>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let q = query.coords_in(space);
    let t = target.coords_in(space);
    let hash = SpatialHash::from_coords(t, radius)?;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for (i, &qc) in q.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for j in hash.neighborhood(qc) {
            let d = dist2(qc, t[j]);
            if d > r2 {
                continue;
            }
            best = match best {
                Some((bd, bj)) if bd < d || (bd == d && bj < j) => Some((bd, bj)),
                _ => Some((d, j)),
            };
        }
        if let Some((d, j)) = best {
            out.push(Match {
                query: i,
                target: j,
                distance: d.sqrt(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coords(n: usize, extent: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                ]
            })
            .collect()
    }

    #[test]
    fn single_point_at_origin() {
        let h = build_hash(&PointCloud::from_coords(vec![[0.0; 3]]), 1.0).unwrap();
        assert_eq!(h.table.len(), 1);
        assert_eq!(h.cell([0, 0, 0]), &[0]);
    }

    #[test]
    fn negative_coordinates_floor() {
        let h = build_hash(&PointCloud::from_coords(vec![[-0.1, 0.0, 0.0]]), 1.0).unwrap();
        assert_eq!(h.cell([-1, 0, 0]), &[0]);
        assert!(h.cell([0, 0, 0]).is_empty());
    }

    #[test]
    fn membership_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords = random_coords(1000, 3.0, &mut rng);
        let h = build_hash(&PointCloud::from_coords(coords.clone()), 0.7).unwrap();
        let mut seen = vec![0usize; coords.len()];
        for (key, members) in &h.table {
            for &i in members {
                seen[i] += 1;
                let c = coords[i];
                let expect = [
                    (c[0] / 0.7).floor() as i64,
                    (c[1] / 0.7).floor() as i64,
                    (c[2] / 0.7).floor() as i64,
                ];
                assert_eq!(*key, expect);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert!(build_hash(&PointCloud::from_coords(coords), 0.0).is_err());
    }

    #[test]
    fn single_candidate_in_radius() {
        let q = PointCloud::from_coords(vec![[0.0; 3]]);
        let t = PointCloud::from_coords(vec![[0.0, 0.0, 0.05], [0.0, 0.0, 0.2]]);
        let m = nearest_within(&q, &t, 0.1, Space::Current).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].query, m[0].target), (0, 0));
        assert!((m[0].distance - 0.05).abs() < 1e-15);
    }

    #[test]
    fn self_match_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pc = PointCloud::from_coords(random_coords(200, 1.0, &mut rng));
        let m = nearest_within(&pc, &pc, 1e-6, Space::Current).unwrap();
        assert_eq!(m.len(), 200);
        assert!(m.iter().all(|m| m.query == m.target && m.distance == 0.0));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = PointCloud::from_coords(random_coords(300, 1.0, &mut rng));
        let b = PointCloud::from_coords(random_coords(300, 1.0, &mut rng));
        let got = nearest_within(&a, &b, 0.3, Space::Current).unwrap();
        let mut expect = Vec::new();
        for (i, &qa) in a.coord.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (j, &tb) in b.coord.iter().enumerate() {
                let d = dist2(qa, tb);
                if d <= 0.09 && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            if let Some((_, j)) = best {
                expect.push((i, j));
            }
        }
        let got: Vec<_> = got.iter().map(|m| (m.query, m.target)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn rejects_non_positive_radius() {
        let pc = PointCloud::from_coords(vec![[0.0; 3]]);
        assert!(nearest_within(&pc, &pc, 0.0, Space::Origin).is_err());
    }
}
