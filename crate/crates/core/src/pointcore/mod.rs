//! Point-cloud data model, voxel grid pooling with parent maps, spatial
//! hashing and radius-limited nearest-neighbour queries.

mod cloud;
mod grid;
mod hash;

pub use cloud::{dist2, norm, PointCloud, Space, Vec3};
pub(crate) use grid::voxel_groups;
pub use grid::{grid_sample, PoolingMap};
pub use hash::{build_hash, nearest_within, Match, SpatialHash};
