use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use lmnet::geom::{FrontalViewMap, NUM_CLASSES};
use lmnet::tensor::Tensor;
use lmnet::{Error, Result};

/// File stems of the five channel renderings, in channel order.
pub const CHANNEL_NAMES: [&str; 5] = ["reflectance", "range", "x", "y", "z"];

/// Background, car, pedestrian, cyclist.
pub const CLASS_COLORS: [[u8; 3]; NUM_CLASSES] = [[0, 0, 0], [230, 60, 50], [60, 200, 80], [70, 110, 240]];

fn save_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(e) => Error::Io(e),
        e => Error::Format(format!("{}: {e}", path.display())),
    }
}

/// One grayscale image per channel, min-max scaled over valid cells.
/// Invalid cells are black.
pub fn channel_images(map: &FrontalViewMap) -> Vec<GrayImage> {
    let (h, w) = (map.height(), map.width());
    let valid = map.validity();
    (0..CHANNEL_NAMES.len())
        .map(|c| {
            let data = map.channels().channel(c);
            let (lo, hi) = data
                .iter()
                .zip(valid)
                .filter(|(_, &v)| v)
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (&x, _)| {
                    (lo.min(x), hi.max(x))
                });
            GrayImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                if !valid[i] {
                    return Luma([0]);
                }
                let t = if hi > lo { (data[i] - lo) / (hi - lo) } else { 1.0 };
                Luma([(t * 255.0).round() as u8])
            })
        })
        .collect()
}

/// Writes `<stem>_<channel>.pgm` for every channel and returns the paths.
pub fn write_channel_images(map: &FrontalViewMap, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    channel_images(map)
        .into_iter()
        .zip(CHANNEL_NAMES)
        .map(|(img, name)| {
            let path = dir.join(format!("{stem}_{name}.pgm"));
            img.save(&path).map_err(|e| save_error(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Most probable class per valid cell in its class color.
pub fn class_image(objectness: &Tensor, map: &FrontalViewMap) -> RgbImage {
    let (h, w) = (map.height(), map.width());
    let n = h * w;
    let prob = objectness.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        if !map.validity()[p] {
            return Rgb(CLASS_COLORS[0]);
        }
        let best = (1..NUM_CLASSES).fold(0, |b, k| if prob[k * n + p] > prob[b * n + p] { k } else { b });
        Rgb(CLASS_COLORS[best])
    })
}

pub fn write_class_image(objectness: &Tensor, map: &FrontalViewMap, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    class_image(objectness, map).save(path).map_err(|e| save_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lmnet::geom::{encode_frontal_view, project, Point3, ProjectionConfig};

    #[test]
    fn min_max_over_valid_cells() {
        let cfg = ProjectionConfig::default();
        let pts = [
            Point3::new(10.0, 0.0, 0.0, 0.2),
            Point3::new(20.0, 1.0, 0.0, 0.6),
            Point3::new(15.0, -1.0, 0.0, 0.3),
        ];
        let map = encode_frontal_view(&pts, &cfg);
        let imgs = channel_images(&map);
        assert_eq!(imgs.len(), 5);
        let at = |img: &GrayImage, p: &Point3| {
            let (r, c) = project(p, &cfg).unwrap();
            img.get_pixel(c as u32, r as u32).0[0]
        };
        assert_eq!(
            [at(&imgs[0], &pts[0]), at(&imgs[0], &pts[1]), at(&imgs[0], &pts[2])],
            [0, 255, 64]
        );
        assert_eq!(imgs[1].pixels().filter(|p| p.0[0] > 0).count(), 2);
    }
}
