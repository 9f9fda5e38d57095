use std::fs;
use std::path::Path;

use super::kitti::{format_kitti_label, read_kitti_bin, read_kitti_label, write_kitti_bin, Calibration};
use super::scene::{crop_range, Scene, CONTAINMENT_EPS};
use crate::error::Result;

/// KITTI object-benchmark subdirectories.
pub const VELODYNE_DIR: &str = "velodyne";
pub const LABEL_DIR: &str = "label_2";
pub const CALIB_DIR: &str = "calib";

/// Sorted stems of the `.bin` scans under `root/velodyne`.
pub fn list_stems(root: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(root.join(VELODYNE_DIR))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Loads scan, label and calibration of one frame, crops the scan and labels
/// each point by box containment.
pub fn load_scene(root: &Path, stem: &str) -> Result<Scene> {
    let points = crop_range(&read_kitti_bin(&root.join(VELODYNE_DIR).join(format!("{stem}.bin")))?);
    let boxes = read_kitti_label(
        &root.join(LABEL_DIR).join(format!("{stem}.txt")),
        &root.join(CALIB_DIR).join(format!("{stem}.txt")),
    )?;
    Ok(Scene::from_boxes(points, boxes, CONTAINMENT_EPS))
}

pub fn write_scene(root: &Path, stem: &str, scene: &Scene, calib: &Calibration) -> Result<()> {
    for dir in [VELODYNE_DIR, LABEL_DIR, CALIB_DIR] {
        fs::create_dir_all(root.join(dir))?;
    }
    write_kitti_bin(&root.join(VELODYNE_DIR).join(format!("{stem}.bin")), &scene.points)?;
    fs::write(
        root.join(LABEL_DIR).join(format!("{stem}.txt")),
        format_kitti_label(&scene.instances, calib),
    )?;
    calib.write(&root.join(CALIB_DIR).join(format!("{stem}.txt")))
}
