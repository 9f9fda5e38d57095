//! Training and evaluation data: KITTI files, cropping, augmentation,
//! per-pixel targets and synthetic scenes.

mod disk;
mod kitti;
mod scene;
mod synth;
mod targets;

pub use disk::{list_stems, load_scene, write_scene, CALIB_DIR, LABEL_DIR, VELODYNE_DIR};
pub use kitti::{
    decode_kitti_bin, encode_kitti_bin, format_kitti_label, parse_kitti_label, parse_kitti_objects, read_kitti_bin,
    read_kitti_label, write_kitti_bin, Calibration, KittiObject,
};
pub use scene::{
    augment, augment_rotate_objects, augment_rotate_z, crop_range, in_crop, AugmentConfig, Scene, CONTAINMENT_EPS,
    CROP_X, CROP_Y, CROP_Z,
};
pub use synth::{synth_dataset, synth_scene, ClassTemplate, SynthConfig};
pub use targets::{rasterize_targets, rasterize_with_map, ClassStats, TargetMaps};
