use log::warn;

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geom::{encode_box, encode_frontal_view, FrontalViewMap, ObjectClass, ProjectionConfig, BACKGROUND};
use crate::net::LossTargets;
use crate::tensor::Tensor;

/// Per-pixel training targets of one scene.
#[derive(Clone, Debug)]
pub struct TargetMaps {
    pub height: usize,
    pub width: usize,
    /// Class id per pixel (background on empty cells too).
    pub classes: Vec<u8>,
    pub valid: Vec<bool>,
    /// `[24, H, W]` corner offsets; NaN wherever the pixel is not an object.
    pub corners: Tensor,
    /// Projected point count of the pixel's instance; 0 off objects.
    pub instance_size: Vec<f32>,
    pub pixel_instance: Vec<Option<u32>>,
    /// Projected point count of every scene instance, in instance order.
    pub instance_counts: Vec<usize>,
    pub instance_classes: Vec<ObjectClass>,
}

impl TargetMaps {
    /// `|O|`
    pub fn object_count(&self) -> usize {
        self.classes
            .iter()
            .zip(&self.valid)
            .filter(|(&c, &v)| v && c != BACKGROUND)
            .count()
    }

    /// `|O^c|`
    pub fn background_count(&self) -> usize {
        self.classes
            .iter()
            .zip(&self.valid)
            .filter(|(&c, &v)| v && c == BACKGROUND)
            .count()
    }

    pub fn loss_targets(&self, stats: &ClassStats) -> LossTargets {
        let mut class_mean_size = [0.0; 4];
        for c in ObjectClass::ALL {
            class_mean_size[c.id() as usize] = stats.mean_size(c);
        }
        LossTargets {
            height: self.height,
            width: self.width,
            classes: self.classes.clone(),
            valid: self.valid.clone(),
            corners: self.corners.clone(),
            instance_size: self.instance_size.clone(),
            class_mean_size,
        }
    }
}

/// Rasterizes labels onto the frontal-view grid.
pub fn rasterize_targets(scene: &Scene, cfg: &ProjectionConfig) -> Result<TargetMaps> {
    let map = encode_frontal_view(&scene.points, cfg);
    rasterize_with_map(scene, &map)
}

/// Same as [`rasterize_targets`] for a map already encoded from
/// `scene.points`.
pub fn rasterize_with_map(scene: &Scene, map: &FrontalViewMap) -> Result<TargetMaps> {
    let (h, w) = (map.height(), map.width());
    let n = h * w;
    let mut classes = vec![BACKGROUND; n];
    let mut pixel_instance = vec![None; n];
    let mut corners = Tensor::full(&[24, h, w], f32::NAN);
    let mut instance_counts = vec![0usize; scene.instances.len()];

    for row in 0..h {
        for col in 0..w {
            let Some(src) = map.source(row, col) else { continue };
            let Some(inst) = scene.point_instance[src] else {
                continue;
            };
            let b = scene
                .instances
                .get(inst as usize)
                .ok_or_else(|| Error::invalid(format!("point {src} references missing instance {inst}")))?;
            let enc = encode_box(&scene.points[src], b)?;
            for (ch, v) in enc.0.iter().enumerate() {
                corners.set3(ch, row, col, *v as f32);
            }
            let cell = row * w + col;
            classes[cell] = b.class.id();
            pixel_instance[cell] = Some(inst);
            instance_counts[inst as usize] += 1;
        }
    }

    let instance_size = pixel_instance
        .iter()
        .map(|i| i.map_or(0.0, |i| instance_counts[i as usize] as f32))
        .collect();
    Ok(TargetMaps {
        height: h,
        width: w,
        classes,
        valid: map.validity().to_vec(),
        corners,
        instance_size,
        pixel_instance,
        instance_counts,
        instance_classes: scene.instances.iter().map(|b| b.class).collect(),
    })
}

/// Mean projected instance size per class over a dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassStats {
    totals: [u64; 3],
    instances: [u64; 3],
}

impl ClassStats {
    pub fn from_targets<'a>(targets: impl IntoIterator<Item = &'a TargetMaps>) -> Self {
        let mut stats = ClassStats::default();
        for t in targets {
            stats.add(t);
        }
        stats
    }

    pub fn add(&mut self, t: &TargetMaps) {
        for (count, class) in t.instance_counts.iter().zip(&t.instance_classes) {
            if *count == 0 {
                warn!("{class} instance without projected points left out of size statistics");
                continue;
            }
            self.totals[class.index()] += *count as u64;
            self.instances[class.index()] += 1;
        }
    }

    /// `s̄[class]`; 1 for classes never seen.
    pub fn mean_size(&self, class: ObjectClass) -> f32 {
        let i = class.index();
        if self.instances[i] == 0 {
            1.0
        } else {
            (self.totals[i] as f64 / self.instances[i] as f64) as f32
        }
    }

    pub fn instance_count(&self, class: ObjectClass) -> u64 {
        self.instances[class.index()]
    }
}
