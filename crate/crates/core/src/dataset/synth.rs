//! Synthetic LiDAR scenes: upright boxes standing on a ground plane, sampled
//! by casting one ray per frontal-view cell, the way a spinning sensor sees
//! them.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, CROP_X, CROP_Y, CROP_Z};
use crate::error::{Error, Result};
use crate::geom::{rotation_z, Box3D, ObjectClass, Point3, ProjectionConfig};

const PLACEMENT_ATTEMPTS: usize = 500;
/// Minimum free space between the footprints of two objects.
const PLACEMENT_GAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTemplate {
    pub count: usize,
    /// `(min, max)` in meters.
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub car: ClassTemplate,
    pub pedestrian: ClassTemplate,
    pub cyclist: ClassTemplate,
    /// Object headings are drawn from `(min, max)` radians.
    pub yaw: (f64, f64),
    /// Distance of object centers from the sensor, meters.
    pub distance: (f64, f64),
    /// Expected returns per frontal-view cell on object surfaces.
    pub surface_density: f64,
    /// Fraction of ground-hitting beams that produce a return.
    pub clutter_density: f64,
    pub ground_z: f64,
    /// Height of object bottoms above the ground plane.
    pub clearance: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            car: ClassTemplate {
                count: 2,
                length: (3.6, 4.6),
                width: (1.6, 1.9),
                height: (1.4, 1.6),
            },
            pedestrian: ClassTemplate {
                count: 2,
                length: (0.5, 0.9),
                width: (0.5, 0.7),
                height: (1.6, 1.85),
            },
            cyclist: ClassTemplate {
                count: 1,
                length: (1.6, 1.9),
                width: (0.5, 0.7),
                height: (1.6, 1.8),
            },
            yaw: (-PI, PI),
            distance: (5.0, 35.0),
            surface_density: 1.0,
            clutter_density: 0.5,
            ground_z: -1.75,
            clearance: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn template(&self, class: ObjectClass) -> &ClassTemplate {
        match class {
            ObjectClass::Car => &self.car,
            ObjectClass::Pedestrian => &self.pedestrian,
            ObjectClass::Cyclist => &self.cyclist,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo;
        for c in ObjectClass::ALL {
            let t = self.template(c);
            if !(range_ok(t.length) && range_ok(t.width) && range_ok(t.height)) {
                return Err(Error::invalid(format!("{c} dimensions must be positive ranges")));
            }
        }
        if !(self.surface_density >= 0.0 && (0.0..=1.0).contains(&self.clutter_density)) {
            return Err(Error::invalid("densities must be non-negative, clutter at most 1"));
        }
        if !range_ok(self.distance) || self.yaw.1 < self.yaw.0 {
            return Err(Error::invalid("distance and yaw must be ordered ranges"));
        }
        Ok(())
    }

    /// Config for scene `index` of a dataset: same layout, derived seed.
    pub fn for_index(&self, index: u64) -> SynthConfig {
        SynthConfig {
            seed: self.seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.clone()
        }
    }
}

/// Ray parameter of the first hit with an upright box, if any.
fn ray_box(dir: &Vector3<f64>, center: &Vector3<f64>, half: &Vector3<f64>, yaw: f64) -> Option<f64> {
    let inv = rotation_z(-yaw);
    let o = inv * -center;
    let d = inv * dir;
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - o[k]) / d[k];
        let c = (half[k] - o[k]) / d[k];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

struct Placed {
    b: Box3D,
    center: Vector3<f64>,
    half: Vector3<f64>,
    yaw: f64,
    radius: f64,
    reflectance: f32,
}

fn place_objects(cfg: &SynthConfig, beams: &ProjectionConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Placed>> {
    let margin = 0.05;
    let az = (beams.azimuth_min + margin, beams.azimuth_max() - margin);
    let mut placed: Vec<Placed> = Vec::new();
    for class in ObjectClass::ALL {
        let t = cfg.template(class);
        for _ in 0..t.count {
            let mut attempt = 0;
            loop {
                attempt += 1;
                if attempt > PLACEMENT_ATTEMPTS {
                    return Err(Error::Capacity(format!(
                        "could not place {class} #{} without overlap after {PLACEMENT_ATTEMPTS} attempts",
                        placed.len() + 1
                    )));
                }
                let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
                    if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                };
                let (l, w, h) = (draw(rng, t.length), draw(rng, t.width), draw(rng, t.height));
                let yaw = draw(rng, cfg.yaw);
                let dist = draw(rng, cfg.distance);
                let azimuth = draw(rng, az);
                let center = Vector3::new(
                    dist * azimuth.cos(),
                    dist * azimuth.sin(),
                    cfg.ground_z + cfg.clearance + h / 2.0,
                );
                let b = Box3D::upright(center, l, w, h, yaw, class);
                let inside = b.corners.iter().all(|c| {
                    (CROP_X.0 as f64..=CROP_X.1 as f64).contains(&c.x)
                        && (CROP_Y.0 as f64..=CROP_Y.1 as f64).contains(&c.y)
                        && (CROP_Z.0 as f64..=CROP_Z.1 as f64).contains(&c.z)
                });
                let radius = 0.5 * l.hypot(w);
                let clear = placed
                    .iter()
                    .all(|o| (o.center.xy() - center.xy()).norm() > o.radius + radius + PLACEMENT_GAP);
                // Keep the sensor out of every box.
                if !inside || !clear || dist <= radius + 1.0 {
                    continue;
                }
                placed.push(Placed {
                    b,
                    center,
                    half: Vector3::new(l / 2.0, w / 2.0, h / 2.0),
                    yaw,
                    radius,
                    reflectance: rng.random_range(0.2..0.9),
                });
                break;
            }
        }
    }
    Ok(placed)
}

/// Generates one labeled scene. Deterministic for a given seed.
pub fn synth_scene(cfg: &SynthConfig, beams: &ProjectionConfig) -> Result<Scene> {
    cfg.validate()?;
    beams.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objects = place_objects(cfg, beams, &mut rng)?;

    let rays_per_cell = cfg.surface_density.ceil().max(1.0) as usize;
    let keep_object = cfg.surface_density / rays_per_cell as f64;
    let mut points = Vec::new();
    let mut point_instance = Vec::new();
    for row in 0..beams.height {
        for col in 0..beams.width {
            for _ in 0..rays_per_cell {
                let u: f64 = rng.random_range(0.05..0.95);
                let v: f64 = rng.random_range(0.05..0.95);
                let azimuth = beams.azimuth_min + (col as f64 + u) * beams.azimuth_step;
                let elevation = beams.elevation_min + ((beams.height - 1 - row) as f64 + v) * beams.elevation_step;
                let dir = Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
                let hit = objects
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| ray_box(&dir, &o.center, &o.half, o.yaw).map(|t| (t, i)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let ground = (dir.z < 0.0).then(|| cfg.ground_z / dir.z);
                let keep: f64 = rng.random();
                match (hit, ground) {
                    (Some((t, i)), g) if g.is_none_or(|g| t < g) => {
                        if keep < keep_object {
                            let p = dir * t;
                            let refl = (objects[i].reflectance + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
                            points.push(Point3::new(p.x as f32, p.y as f32, p.z as f32, refl));
                            point_instance.push(Some(i as u32));
                        }
                    }
                    (_, Some(t)) => {
                        let p = dir * t;
                        let in_range = p.x <= CROP_X.1 as f64 && p.y.abs() <= CROP_Y.1 as f64;
                        if keep < cfg.clutter_density && in_range {
                            let refl = rng.random_range(0.0..0.25);
                            points.push(Point3::new(p.x as f32, p.y as f32, p.z as f32, refl));
                            point_instance.push(None);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    Ok(Scene {
        points,
        instances: objects.into_iter().map(|o| o.b).collect(),
        point_instance,
    })
}

/// `count` scenes with seeds derived from `cfg.seed`.
pub fn synth_dataset(cfg: &SynthConfig, beams: &ProjectionConfig, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| synth_scene(&cfg.for_index(i), beams))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only_one_car() -> SynthConfig {
        let mut cfg = SynthConfig::default();
        cfg.pedestrian.count = 0;
        cfg.cyclist.count = 0;
        cfg.car.count = 1;
        cfg.clutter_density = 0.0;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn single_car_without_clutter() {
        let scene = synth_scene(&only_one_car(), &ProjectionConfig::default()).unwrap();
        assert_eq!(scene.instances.len(), 1);
        assert!(!scene.points.is_empty());
        assert!(scene.point_instance.iter().all(|i| *i == Some(0)));
        scene.validate().unwrap();
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        };
        let beams = ProjectionConfig::default();
        assert_eq!(synth_scene(&cfg, &beams).unwrap(), synth_scene(&cfg, &beams).unwrap());
        let other = SynthConfig { seed: 6, ..cfg };
        assert_ne!(
            synth_scene(&other, &beams).unwrap(),
            synth_scene(
                &SynthConfig {
                    seed: 5,
                    ..other.clone()
                },
                &beams
            )
            .unwrap()
        );
    }

    #[test]
    fn impossible_layout_is_capacity_error() {
        let mut cfg = SynthConfig::default();
        cfg.car.count = 60;
        cfg.distance = (8.0, 9.0);
        assert!(matches!(
            synth_scene(&cfg, &ProjectionConfig::default()),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn nearer_objects_get_more_points() {
        let beams = ProjectionConfig::default();
        let mut near = only_one_car();
        near.yaw = (0.0, 0.0);
        near.distance = (8.0, 8.0);
        let far = SynthConfig {
            distance: (30.0, 30.0),
            ..near.clone()
        };
        let n_near = synth_scene(&near, &beams).unwrap().points.len();
        let n_far = synth_scene(&far, &beams).unwrap().points.len();
        assert!(n_near > 4 * n_far, "near {n_near} far {n_far}");
    }
}
