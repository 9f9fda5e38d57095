use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::Point3;
use crate::tensor::Tensor;

/// Channel order: reflection, XY range, forward (x), side (y), height (z).
pub const FEATURE_CHANNELS: usize = 5;

const NO_POINT: u32 = u32::MAX;

/// Angular grid of the frontal-view map. Column 0 sits at `azimuth_min`,
/// row 0 at the highest elevation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    /// Radians per column.
    pub azimuth_step: f64,
    /// Radians per row.
    pub elevation_step: f64,
    pub azimuth_min: f64,
    pub elevation_min: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for ProjectionConfig {
    /// 90 degree frontal field of view over 512 columns, and the HDL-64E
    /// vertical span of -25..+2 degrees over 64 rows.
    fn default() -> Self {
        let elevation_min = (-25.0f64).to_radians();
        let elevation_max = 2.0f64.to_radians();
        ProjectionConfig {
            azimuth_step: 2.0 * FRAC_PI_4 / 512.0,
            elevation_step: (elevation_max - elevation_min) / 64.0,
            azimuth_min: -FRAC_PI_4,
            elevation_min,
            width: 512,
            height: 64,
        }
    }
}

impl ProjectionConfig {
    pub fn azimuth_max(&self) -> f64 {
        self.azimuth_min + self.azimuth_step * self.width as f64
    }

    pub fn elevation_max(&self) -> f64 {
        self.elevation_min + self.elevation_step * self.height as f64
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.azimuth_step > 0.0
            && self.elevation_step > 0.0
            && self.width > 0
            && self.height > 0
            && self.azimuth_min.is_finite()
            && self.elevation_min.is_finite();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!(
                "projection needs positive steps and sizes: {self:?}"
            )))
        }
    }

    /// Azimuth and elevation through the center of a cell.
    pub fn cell_center_angles(&self, row: usize, col: usize) -> (f64, f64) {
        let azimuth = self.azimuth_min + (col as f64 + 0.5) * self.azimuth_step;
        let elevation = self.elevation_min + ((self.height - 1 - row) as f64 + 0.5) * self.elevation_step;
        (azimuth, elevation)
    }
}

/// Bin index of `angle` on a grid starting at `min` with `count` bins. The
/// upper edge of the field of view belongs to the last bin.
fn bin(angle: f64, min: f64, step: f64, count: usize) -> Option<usize> {
    let t = (angle - min) / step;
    if !(t >= 0.0) || t > count as f64 {
        return None;
    }
    Some((t.floor() as usize).min(count - 1))
}

/// Cell `(row, col)` hit by `p`, or `None` when it falls outside the map.
pub fn project(p: &Point3, cfg: &ProjectionConfig) -> Option<(usize, usize)> {
    let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
    let azimuth = y.atan2(x);
    let elevation = z.atan2((x * x + y * y).sqrt());
    let col = bin(azimuth, cfg.azimuth_min, cfg.azimuth_step, cfg.width)?;
    let level = bin(elevation, cfg.elevation_min, cfg.elevation_step, cfg.height)?;
    Some((cfg.height - 1 - level, col))
}

/// Five-channel frontal-view image of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontalViewMap {
    channels: Tensor,
    valid: Vec<bool>,
    source: Vec<u32>,
}

impl FrontalViewMap {
    pub fn empty(height: usize, width: usize) -> Self {
        FrontalViewMap {
            channels: Tensor::zeros(&[FEATURE_CHANNELS, height, width]),
            valid: vec![false; height * width],
            source: vec![NO_POINT; height * width],
        }
    }

    /// Rebuilds a map from stored channels and validity. Source indices are
    /// not part of the stored form and come back empty.
    pub fn from_parts(channels: Tensor, valid: Vec<bool>) -> crate::Result<Self> {
        let (c, h, w) = channels.dims3()?;
        if c != FEATURE_CHANNELS || valid.len() != h * w {
            return Err(crate::Error::invalid(format!(
                "frontal view needs {FEATURE_CHANNELS} channels and one validity flag per cell, got {:?} and {}",
                channels.shape(),
                valid.len()
            )));
        }
        Ok(FrontalViewMap {
            channels,
            valid,
            source: vec![NO_POINT; h * w],
        })
    }

    pub fn height(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.channels.shape()[2]
    }

    pub fn channels(&self) -> &Tensor {
        &self.channels
    }

    pub fn into_channels(self) -> Tensor {
        self.channels
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width() + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Index (into the encoded point list) of the point that owns a cell.
    pub fn source(&self, row: usize, col: usize) -> Option<usize> {
        match self.source[row * self.width() + col] {
            NO_POINT => None,
            i => Some(i as usize),
        }
    }

    /// The point stored in a cell, reconstructed from the channels.
    pub fn point_at(&self, row: usize, col: usize) -> Option<Point3> {
        if !self.is_valid(row, col) {
            return None;
        }
        let c = &self.channels;
        Some(Point3::new(
            c.at3(2, row, col),
            c.at3(3, row, col),
            c.at3(4, row, col),
            c.at3(0, row, col),
        ))
    }
}

/// Projects every point into the map. When several points share a cell the
/// one with the smaller XY range wins (the earlier one on exact ties).
pub fn encode_frontal_view(points: &[Point3], cfg: &ProjectionConfig) -> FrontalViewMap {
    let (h, w) = (cfg.height, cfg.width);
    let mut map = FrontalViewMap::empty(h, w);
    let mut best = vec![f32::INFINITY; h * w];
    for (i, p) in points.iter().enumerate() {
        let Some((row, col)) = project(p, cfg) else {
            continue;
        };
        let cell = row * w + col;
        let range = p.ground_range();
        if range < best[cell] {
            best[cell] = range;
            map.source[cell] = i as u32;
        }
    }
    for cell in 0..h * w {
        let i = map.source[cell];
        if i == NO_POINT {
            continue;
        }
        let p = points[i as usize];
        map.valid[cell] = true;
        let (row, col) = (cell / w, cell % w);
        let values = [p.reflectance, best[cell], p.x, p.y, p.z];
        for (ch, v) in values.into_iter().enumerate() {
            map.channels.set3(ch, row, col, v);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boresight_is_center_column() {
        let cfg = ProjectionConfig::default();
        let (_, col) = project(&Point3::new(10.0, 0.0, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(col, 256);
    }

    #[test]
    fn left_fov_edge_is_last_column() {
        let cfg = ProjectionConfig::default();
        let (_, col) = project(&Point3::new(1.0, 1.0, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(col, 511);
    }

    #[test]
    fn behind_sensor_is_out_of_view() {
        let cfg = ProjectionConfig::default();
        assert_eq!(project(&Point3::new(-5.0, 0.0, 0.0, 0.0), &cfg), None);
        // Below the lowest beam.
        assert_eq!(project(&Point3::new(1.0, 0.0, -1.0, 0.0), &cfg), None);
    }

    #[test]
    fn row_zero_is_highest_elevation() {
        let cfg = ProjectionConfig::default();
        let (high, _) = project(&Point3::new(10.0, 0.0, 0.3, 0.0), &cfg).unwrap();
        let (low, _) = project(&Point3::new(10.0, 0.0, -3.0, 0.0), &cfg).unwrap();
        assert!(high < low);
    }

    #[test]
    fn single_point_channels() {
        // (3, 4, 1) sits at 53 degrees azimuth and 11 degrees elevation,
        // outside the default frontal view.
        let cfg = ProjectionConfig {
            azimuth_min: -std::f64::consts::PI,
            azimuth_step: std::f64::consts::TAU / 1024.0,
            elevation_min: -0.5,
            elevation_step: 1.0 / 64.0,
            width: 1024,
            height: 64,
        };
        let p = Point3::new(3.0, 4.0, 1.0, 0.5);
        let map = encode_frontal_view(&[p], &cfg);
        assert_eq!(map.valid_count(), 1);
        let (r, c) = project(&p, &cfg).unwrap();
        let got: Vec<f32> = (0..5).map(|ch| map.channels().at3(ch, r, c)).collect();
        assert_eq!(got, vec![0.5, 5.0, 3.0, 4.0, 1.0]);
        assert_eq!(map.source(r, c), Some(0));
    }

    #[test]
    fn nearest_point_wins_cell() {
        let cfg = ProjectionConfig::default();
        let far = Point3::new(7.0, 0.0, 0.0, 0.1);
        let near = Point3::new(5.0, 0.0, 0.0, 0.9);
        assert_eq!(project(&far, &cfg), project(&near, &cfg));
        let map = encode_frontal_view(&[far, near], &cfg);
        let (r, c) = project(&near, &cfg).unwrap();
        assert_eq!(map.channels().at3(1, r, c), 5.0);
        assert_eq!(map.source(r, c), Some(1));
        assert_eq!(map.valid_count(), 1);
    }

    #[test]
    fn empty_cloud_is_all_invalid() {
        let cfg = ProjectionConfig::default();
        let map = encode_frontal_view(&[], &cfg);
        assert_eq!(map.valid_count(), 0);
        assert!(map.channels().data().iter().all(|&v| v == 0.0));
    }

    fn in_view_point() -> impl Strategy<Value = Point3> {
        (2.0f32..60.0, -0.7f64..0.7, -0.4f64..0.03, 0.0f32..1.0).prop_map(|(r, az, el, refl)| {
            let (r, az, el) = (r as f64, az, el);
            Point3::new(
                (r * az.cos()) as f32,
                (r * az.sin()) as f32,
                (r * el.tan()) as f32,
                refl,
            )
        })
    }

    proptest! {
        #[test]
        fn column_is_monotone_in_azimuth(r in 1.0f64..50.0, a in -0.78f64..0.78, b in -0.78f64..0.78) {
            let cfg = ProjectionConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pa = Point3::new((r * lo.cos()) as f32, (r * lo.sin()) as f32, 0.0, 0.0);
            let pb = Point3::new((r * hi.cos()) as f32, (r * hi.sin()) as f32, 0.0, 0.0);
            if let (Some((_, ca)), Some((_, cb))) = (project(&pa, &cfg), project(&pb, &cfg)) {
                prop_assert!(ca <= cb);
            }
        }

        #[test]
        fn cell_center_is_within_one_step(p in in_view_point()) {
            let cfg = ProjectionConfig::default();
            if let Some((row, col)) = project(&p, &cfg) {
                let (az, el) = cfg.cell_center_angles(row, col);
                let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
                prop_assert!((y.atan2(x) - az).abs() < cfg.azimuth_step);
                prop_assert!((z.atan2((x * x + y * y).sqrt()) - el).abs() < cfg.elevation_step);
            }
        }

        #[test]
        fn range_channel_matches_source(points in prop::collection::vec(in_view_point(), 1..200)) {
            let cfg = ProjectionConfig::default();
            let map = encode_frontal_view(&points, &cfg);
            for row in 0..cfg.height {
                for col in 0..cfg.width {
                    match map.source(row, col) {
                        Some(i) => {
                            let p = points[i];
                            let r = ((p.x as f64).powi(2) + (p.y as f64).powi(2)).sqrt();
                            prop_assert!((map.channels().at3(1, row, col) as f64 - r).abs() < 1e-5);
                        }
                        None => {
                            for ch in 0..FEATURE_CHANNELS {
                                prop_assert_eq!(map.channels().at3(ch, row, col), 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
}
