//! Sensor-frame geometry: LiDAR returns, the cylindrical frontal-view
//! projection and the corner-offset encoding of 3D boxes.
//!
//! The sensor frame has x forward, y left and z up, in meters.

mod boxes;
mod projection;

pub use boxes::{
    decode_box, decode_box_at, encode_box, encode_box_at, observation_angles, rotation, rotation_z, Box3D, BoxEncoding,
    CORNER_COUNT, FRONT_TOP_LEFT, REAR_BOTTOM_RIGHT,
};
pub use projection::{encode_frontal_view, project, FrontalViewMap, ProjectionConfig, FEATURE_CHANNELS};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// One LiDAR return in the sensor frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Normalized to `[0, 1]`.
    pub reflectance: f32,
}

impl Point3 {
    pub fn new(x: f32, y: f32, z: f32, reflectance: f32) -> Self {
        Point3 { x, y, z, reflectance }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x as f64, self.y as f64, self.z as f64)
    }

    /// Distance on the XY plane.
    pub fn ground_range(&self) -> f32 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Class id of the background in objectness maps.
pub const BACKGROUND: u8 = 0;
/// Background plus the three object classes.
pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist];

    /// Channel index in the objectness map (0 is background).
    pub fn id(self) -> u8 {
        match self {
            ObjectClass::Car => 1,
            ObjectClass::Pedestrian => 2,
            ObjectClass::Cyclist => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(ObjectClass::Car),
            2 => Some(ObjectClass::Pedestrian),
            3 => Some(ObjectClass::Cyclist),
            _ => None,
        }
    }

    /// Type string used in KITTI label files.
    pub fn kitti_name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }

    pub fn from_kitti_name(name: &str) -> Option<Self> {
        match name {
            "Car" => Some(ObjectClass::Car),
            "Pedestrian" => Some(ObjectClass::Pedestrian),
            "Cyclist" => Some(ObjectClass::Cyclist),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.id() as usize - 1
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.kitti_name())
    }
}
