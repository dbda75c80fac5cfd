//! Multi-view pretext generation: kNN crops, photometric and spatial
//! augmentation, grid-patch masking with masked-point jitter, and cross-view
//! matching in pre-augmentation coordinates.

mod augment;
mod crop;
mod mask;
mod views;

pub use augment::{AugmentConfig, AugmentParams, Photometric, Spatial};
pub use crop::{crop, crop_rows, crop_size, MAX_CROP_POINTS};
pub use mask::{patch_mask, MaskParams};
pub use views::{
    generate_views, generate_views_unchecked, match_pairs, ViewRecord, ViewSet, MIN_SCENE_POINTS,
    N_GLOBAL, N_LOCAL, N_MASKED,
};
