//! Deterministic synthetic scenes and their on-disk format.

pub mod dataset;
pub mod mask;
pub mod rle;
pub mod scene;

pub use dataset::{
    build_manifest, load_dataset, read_manifest, read_png, write_dataset, Dataset, DatasetManifest,
    IMAGES_DIR, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use mask::{min_enclosing_box, BinaryMask};
pub use rle::{rle_decode, rle_encode, Rle};
pub use scene::{generate_scene, generate_scenes, scene_seed, Instance, SceneConfig, SceneSample, CLASS_NAMES};
