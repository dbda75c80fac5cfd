use crate::error::{Error, Result};
use crate::pointcore::cloud::{dist2, norm, PointCloud, Vec3};

/// Fine-to-coarse parent map recorded by one grid-pooling pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolingMap {
    /// For each fine row, the coarse row it pools into.
    pub parent: Vec<usize>,
    /// Number of fine rows per coarse row.
    pub counts: Vec<usize>,
}

impl PoolingMap {
    /// Builds a map from parent indices, deriving the counts.
    pub fn from_parents(parent: Vec<usize>, n_coarse: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_coarse];
        for &p in &parent {
            if p >= n_coarse {
                return Err(Error::invalid(format!(
                    "parent {p} out of range for {n_coarse} coarse rows"
                )));
            }
            counts[p] += 1;
        }
        let map = PoolingMap { parent, counts };
        map.validate()?;
        Ok(map)
    }

    pub fn n_fine(&self) -> usize {
        self.parent.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut counts = vec![0usize; self.counts.len()];
        for &p in &self.parent {
            if p >= counts.len() {
                return Err(Error::invalid(format!("parent {p} out of range")));
            }
            counts[p] += 1;
        }
        if counts != self.counts {
            return Err(Error::invalid("pooling counts disagree with parents"));
        }
        if counts.contains(&0) {
            return Err(Error::invalid("pooling map has an empty coarse row"));
        }
        Ok(())
    }

    /// Chains `self` (stage a -> b) with `next` (stage b -> c) into a -> c.
    pub fn compose(&self, next: &PoolingMap) -> Result<PoolingMap> {
        if self.n_coarse() != next.n_fine() {
            return Err(Error::invalid(format!(
                "cannot compose maps: {} coarse rows vs {} fine rows",
                self.n_coarse(),
                next.n_fine()
            )));
        }
        let parent = self.parent.iter().map(|&p| next.parent[p]).collect();
        PoolingMap::from_parents(parent, next.n_coarse())
    }

    /// Fine-row indices grouped by coarse row, in ascending fine order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for (i, &p) in self.parent.iter().enumerate() {
            out[p].push(i);
        }
        out
    }
}

pub(crate) fn voxel_key(c: Vec3, cell: f64) -> [i64; 3] {
    [
        (c[0] / cell).floor() as i64,
        (c[1] / cell).floor() as i64,
        (c[2] / cell).floor() as i64,
    ]
}

/// Groups point rows by voxel key, returning groups ordered lexicographically
/// by key with members in ascending row order.
pub(crate) fn voxel_groups(coords: &[Vec3], cell: f64) -> Vec<([i64; 3], Vec<usize>)> {
    let mut keyed: Vec<([i64; 3], usize)> = coords
        .iter()
        .enumerate()
        .map(|(i, &c)| (voxel_key(c, cell), i))
        .collect();
    keyed.sort_unstable();
    let mut groups: Vec<([i64; 3], Vec<usize>)> = Vec::new();
    for (key, i) in keyed {
        match groups.last_mut() {
            Some((k, members)) if *k == key => members.push(i),
            _ => groups.push((key, vec![i])),
        }
    }
    groups
}

fn mean3(rows: &[Vec3], members: &[usize]) -> Vec3 {
    let mut acc = [0.0; 3];
    for &i in members {
        for d in 0..3 {
            acc[d] += rows[i][d];
        }
    }
    let n = members.len() as f64;
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

/// Pools a cloud onto a voxel grid of edge `grid_size`.
///
/// Output rows are ordered lexicographically by integer voxel key. Coordinates,
/// colors and normals are voxel means (normals renormalised, with `(0,0,1)`
/// standing in when the mean vanishes); labels take the majority with the
/// smallest id winning ties; origin fields come from the member closest to
/// the voxel mean, the smaller origin index winning ties.
pub fn grid_sample(cloud: &PointCloud, grid_size: f64) -> Result<(PointCloud, PoolingMap)> {
    if !(grid_size > 0.0) || !grid_size.is_finite() {
        return Err(Error::invalid(format!(
            "grid_size must be positive, got {grid_size}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::invalid("grid_sample on an empty cloud"));
    }
    let mut groups = voxel_groups(&cloud.coord, grid_size);
    // Visit members in origin order so pooled values do not depend on row order.
    for (_, members) in groups.iter_mut() {
        members.sort_unstable_by_key(|&i| cloud.origin_index[i]);
    }
    let n_out = groups.len();
    let mut parent = vec![0usize; cloud.len()];
    let mut coord = Vec::with_capacity(n_out);
    let mut origin_coord = Vec::with_capacity(n_out);
    let mut origin_index = Vec::with_capacity(n_out);
    let mut color = cloud.color.as_ref().map(|_| Vec::with_capacity(n_out));
    let mut normal = cloud.normal.as_ref().map(|_| Vec::with_capacity(n_out));
    let mut label = cloud.label.as_ref().map(|_| Vec::with_capacity(n_out));

    for (out_idx, (_, members)) in groups.iter().enumerate() {
        for &i in members {
            parent[i] = out_idx;
        }
        let mean = mean3(&cloud.coord, members);
        let nearest = *members
            .iter()
            .min_by(|&&a, &&b| {
                dist2(cloud.coord[a], mean)
                    .total_cmp(&dist2(cloud.coord[b], mean))
                    .then(cloud.origin_index[a].cmp(&cloud.origin_index[b]))
            })
            .expect("voxel groups are nonempty");
        coord.push(mean);
        origin_coord.push(cloud.origin_coord[nearest]);
        origin_index.push(cloud.origin_index[nearest]);

        if let (Some(out), Some(src)) = (color.as_mut(), cloud.color.as_ref()) {
            out.push(mean3(src, members));
        }
        if let (Some(out), Some(src)) = (normal.as_mut(), cloud.normal.as_ref()) {
            let m = mean3(src, members);
            let len = norm(m);
            if len > 1e-12 {
                out.push([m[0] / len, m[1] / len, m[2] / len]);
            } else {
                log::debug!("zero-sum normals in voxel {out_idx}; substituting +z");
                out.push([0.0, 0.0, 1.0]);
            }
        }
        if let (Some(out), Some(src)) = (label.as_mut(), cloud.label.as_ref()) {
            out.push(majority(members.iter().map(|&i| src[i])));
        }
    }

    let counts = groups.iter().map(|(_, m)| m.len()).collect();
    Ok((
        PointCloud {
            coord,
            color,
            normal,
            label,
            origin_coord,
            origin_index,
        },
        PoolingMap { parent, counts },
    ))
}

/// Most frequent value, smallest value on ties.
pub(crate) fn majority(values: impl Iterator<Item = u32>) -> u32 {
    let mut v: Vec<u32> = values.collect();
    v.sort_unstable();
    let mut best = (0usize, u32::MAX);
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if j - i > best.0 {
            best = (j - i, v[i]);
        }
        i = j;
    }
    best.1
}
