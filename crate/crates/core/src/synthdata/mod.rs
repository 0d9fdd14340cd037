//! Synthetic urban scenes standing in for aerial orthophotos, plus the
//! preprocessing shared with real PNG data.

mod image;
mod manifest;
mod normalize;
mod scene;

pub use image::{load_png, save_png, ChangeMask, Class, ClassMask, RgbImage, NUM_CLASSES};
pub use manifest::{read_manifest, write_manifest, ManifestRecord};
pub use normalize::{compute_stats, denormalize, normalize, NormalizationStats};
pub use scene::{
    add_gaussian_noise, generate_scene, simulate_change, tile, tile_mask, ChangeConfig, ChangePair, LabeledImage,
    MAX_FOLIAGE_JITTER, MIN_SCENE_SIZE,
};
