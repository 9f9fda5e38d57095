use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotation_z, Box3D, Point3};

/// Tolerance for a labeled point to count as inside its box, in meters.
pub const CONTAINMENT_EPS: f64 = 0.05;

/// Crop volume in the sensor frame, closed on both ends.
pub const CROP_X: (f32, f32) = (0.0, 70.0);
pub const CROP_Y: (f32, f32) = (-40.0, 40.0);
pub const CROP_Z: (f32, f32) = (-2.0, 2.0);

pub fn in_crop(p: &Point3) -> bool {
    (CROP_X.0..=CROP_X.1).contains(&p.x) && (CROP_Y.0..=CROP_Y.1).contains(&p.y) && (CROP_Z.0..=CROP_Z.1).contains(&p.z)
}

/// Keeps the points inside `[0, 70] x [-40, 40] x [-2, 2]` meters.
pub fn crop_range(points: &[Point3]) -> Vec<Point3> {
    points.iter().copied().filter(in_crop).collect()
}

/// A labeled point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub points: Vec<Point3>,
    pub instances: Vec<Box3D>,
    /// Instance index of each point, `None` for background.
    pub point_instance: Vec<Option<u32>>,
}

impl Scene {
    pub fn unlabeled(points: Vec<Point3>) -> Self {
        let n = points.len();
        Scene {
            points,
            instances: Vec::new(),
            point_instance: vec![None; n],
        }
    }

    /// Labels each point with the box that contains it (within `eps`). A
    /// point inside several boxes goes to the one with the nearest center.
    pub fn from_boxes(points: Vec<Point3>, instances: Vec<Box3D>, eps: f64) -> Self {
        let point_instance = points
            .iter()
            .map(|p| {
                let v = p.position();
                instances
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.contains(&v, eps))
                    .min_by(|(_, a), (_, b)| (a.center() - v).norm().total_cmp(&(b.center() - v).norm()))
                    .map(|(i, _)| i as u32)
            })
            .collect();
        Scene {
            points,
            instances,
            point_instance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.point_instance.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} points but {} instance labels",
                self.points.len(),
                self.point_instance.len()
            )));
        }
        for (p, inst) in self.points.iter().zip(&self.point_instance) {
            let Some(i) = inst else { continue };
            let b = self
                .instances
                .get(*i as usize)
                .ok_or_else(|| Error::invalid(format!("point references missing instance {i}")))?;
            if !b.contains(&p.position(), CONTAINMENT_EPS) {
                return Err(Error::invalid(format!(
                    "point ({}, {}, {}) lies outside its instance box {i}",
                    p.x, p.y, p.z
                )));
            }
        }
        Ok(())
    }

    /// Drops points outside the crop volume, keeping labels aligned.
    pub fn cropped(&self) -> Scene {
        let (points, point_instance) = self
            .points
            .iter()
            .zip(&self.point_instance)
            .filter(|(p, _)| in_crop(p))
            .map(|(p, i)| (*p, *i))
            .unzip();
        Scene {
            points,
            instances: self.instances.clone(),
            point_instance,
        }
    }

    pub fn labeled_count(&self, instance: usize) -> usize {
        self.point_instance
            .iter()
            .filter(|i| **i == Some(instance as u32))
            .count()
    }
}

fn rotate_point(p: &Point3, angle: f64) -> Point3 {
    let v = rotation_z(angle) * p.position();
    Point3::new(v.x as f32, v.y as f32, v.z as f32, p.reflectance)
}

/// Rotates the whole scene about the sensor z axis.
pub fn augment_rotate_z(scene: &Scene, angle: f64) -> Scene {
    if angle == 0.0 {
        return scene.clone();
    }
    let rot = rotation_z(angle);
    Scene {
        points: scene.points.iter().map(|p| rotate_point(p, angle)).collect(),
        instances: scene
            .instances
            .iter()
            .map(|b| b.transformed(&rot, &Vector3::zeros()))
            .collect(),
        point_instance: scene.point_instance.clone(),
    }
}

/// Rotates each object (its box and labeled points) about the sensor z axis
/// by its own angle; background points stay put.
pub fn augment_rotate_objects(scene: &Scene, angles: &[f64]) -> Result<Scene> {
    if angles.len() != scene.instances.len() {
        return Err(Error::invalid(format!(
            "{} angles for {} instances",
            angles.len(),
            scene.instances.len()
        )));
    }
    let points = scene
        .points
        .iter()
        .zip(&scene.point_instance)
        .map(|(p, inst)| match inst {
            Some(i) => rotate_point(p, angles[*i as usize]),
            None => *p,
        })
        .collect();
    let instances = scene
        .instances
        .iter()
        .zip(angles)
        .map(|(b, &a)| b.transformed(&rotation_z(a), &Vector3::zeros()))
        .collect();
    Ok(Scene {
        points,
        instances,
        point_instance: scene.point_instance.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotations are drawn uniformly from `[-max_angle_deg, max_angle_deg]`.
    pub max_angle_deg: f64,
    /// Rotated copies added per source scene.
    pub replicas: usize,
    /// Rotate objects individually instead of the whole scene.
    pub per_object: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_angle_deg: 15.0,
            replicas: 0,
            per_object: false,
        }
    }
}

/// One randomly rotated copy of `scene` according to `cfg`.
pub fn augment<R: Rng>(scene: &Scene, cfg: &AugmentConfig, rng: &mut R) -> Scene {
    let max = cfg.max_angle_deg.to_radians().abs();
    let mut draw = || if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
    if cfg.per_object {
        let angles: Vec<f64> = scene.instances.iter().map(|_| draw()).collect();
        augment_rotate_objects(scene, &angles).expect("one angle per instance")
    } else {
        augment_rotate_z(scene, draw())
    }
}
