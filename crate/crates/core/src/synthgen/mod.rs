//! Deterministic synthetic indoor rooms and the PTC1 dataset container.

mod format;
mod scene;

pub use format::{
    decode_clouds, encode_cloud, encode_clouds, read_dataset, write_dataset, FIELD_COLOR,
    FIELD_LABEL, FIELD_NORMAL, HEADER_LEN, MAGIC, VERSION,
};
pub use scene::{
    class_areas, generate_scene, scene_spec_for, SceneSpec, CLASS_BOX, CLASS_CEILING, CLASS_FLOOR,
    CLASS_NAMES, CLASS_SPHERE, CLASS_WALL, NUM_CLASSES,
};
