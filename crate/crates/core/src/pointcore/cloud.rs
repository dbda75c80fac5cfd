use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Columnar point cloud. Every present array has the same leading length.
///
/// `origin_coord` holds coordinates before any augmentation and
/// `origin_index` the row each point came from in the source scene; both are
/// carried through crops, pooling and augmentation so that views of one scene
/// can be matched against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coord: Vec<Vec3>,
    pub color: Option<Vec<Vec3>>,
    pub normal: Option<Vec<Vec3>>,
    pub label: Option<Vec<u32>>,
    pub origin_coord: Vec<Vec3>,
    pub origin_index: Vec<usize>,
}

impl PointCloud {
    /// A cloud whose origin fields are the coordinates themselves.
    pub fn from_coords(coord: Vec<Vec3>) -> Self {
        let origin_index = (0..coord.len()).collect();
        PointCloud {
            origin_coord: coord.clone(),
            coord,
            color: None,
            normal: None,
            label: None,
            origin_index,
        }
    }

    pub fn with_color(mut self, color: Vec<Vec3>) -> Self {
        self.color = Some(color);
        self
    }

    pub fn with_normal(mut self, normal: Vec<Vec3>) -> Self {
        self.normal = Some(normal);
        self
    }

    pub fn with_label(mut self, label: Vec<u32>) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.coord.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coord.is_empty()
    }

    /// Checks every structural invariant of the cloud.
    pub fn validate(&self) -> Result<()> {
        let n = self.coord.len();
        if n == 0 {
            return Err(Error::invalid("point cloud is empty"));
        }
        let check_len = |name: &str, len: usize| {
            if len != n {
                Err(Error::invalid(format!(
                    "field {name} has length {len}, expected {n}"
                )))
            } else {
                Ok(())
            }
        };
        check_len("origin_coord", self.origin_coord.len())?;
        check_len("origin_index", self.origin_index.len())?;
        if let Some(color) = &self.color {
            check_len("color", color.len())?;
            if let Some(i) = color
                .iter()
                .position(|c| c.iter().any(|&v| !(0.0..=1.0).contains(&v)))
            {
                return Err(Error::invalid(format!("color row {i} outside [0,1]")));
            }
        }
        if let Some(normal) = &self.normal {
            check_len("normal", normal.len())?;
            if let Some(i) = normal.iter().position(|v| (norm(*v) - 1.0).abs() > 1e-4) {
                return Err(Error::invalid(format!("normal row {i} is not unit length")));
            }
        }
        if let Some(label) = &self.label {
            check_len("label", label.len())?;
        }
        if self.coord.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        let mut seen = self.origin_index.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("origin_index values are not unique"));
        }
        Ok(())
    }

    /// Row subset carrying every field along, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let pick3 = |src: &[Vec3]| indices.iter().map(|&i| src[i]).collect::<Vec<_>>();
        PointCloud {
            coord: pick3(&self.coord),
            color: self.color.as_deref().map(pick3),
            normal: self.normal.as_deref().map(pick3),
            label: self
                .label
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            origin_coord: pick3(&self.origin_coord),
            origin_index: indices.iter().map(|&i| self.origin_index[i]).collect(),
        }
    }

    /// Coordinates in the requested space.
    pub fn coords_in(&self, space: Space) -> &[Vec3] {
        match space {
            Space::Current => &self.coord,
            Space::Origin => &self.origin_coord,
        }
    }
}

/// Which coordinate set a spatial query runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Current,
    Origin,
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_mismatched_lengths() {
        let mut pc = PointCloud::from_coords(vec![[0.0; 3], [1.0; 3]]);
        pc.color = Some(vec![[0.5; 3]]);
        assert!(matches!(pc.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn validate_rejects_bad_color_and_normal() {
        let pc = PointCloud::from_coords(vec![[0.0; 3]]).with_color(vec![[1.2, 0.0, 0.0]]);
        assert!(pc.validate().is_err());
        let pc = PointCloud::from_coords(vec![[0.0; 3]]).with_normal(vec![[0.0, 0.0, 0.9]]);
        assert!(pc.validate().is_err());
    }

    #[test]
    fn validate_rejects_duplicate_origin_index() {
        let mut pc = PointCloud::from_coords(vec![[0.0; 3], [1.0; 3]]);
        pc.origin_index = vec![3, 3];
        assert!(pc.validate().is_err());
    }

    #[test]
    fn select_carries_fields() {
        let pc =
            PointCloud::from_coords(vec![[0.0; 3], [1.0; 3], [2.0; 3]]).with_label(vec![4, 5, 6]);
        let s = pc.select(&[2, 0]);
        assert_eq!(s.coord, vec![[2.0; 3], [0.0; 3]]);
        assert_eq!(s.label, Some(vec![6, 4]));
        assert_eq!(s.origin_index, vec![2, 0]);
    }
}
