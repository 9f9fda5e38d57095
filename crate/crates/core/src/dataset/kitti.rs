//! KITTI object-benchmark file formats: velodyne scans, labels, calibration
//! and detection results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geom::{Box3D, ObjectClass, Point3};

const POINT_BYTES: usize = 16;

pub fn decode_kitti_bin(bytes: &[u8]) -> Result<Vec<Point3>> {
    if bytes.len() % POINT_BYTES != 0 {
        return Err(Error::Format(format!(
            "velodyne scan of {} bytes is not a whole number of 16-byte points",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(POINT_BYTES)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
            Point3::new(f(0), f(4), f(8), f(12))
        })
        .collect())
}

pub fn encode_kitti_bin(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.reflectance] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a velodyne scan: little-endian `f32` quadruples `(x, y, z, r)`.
pub fn read_kitti_bin(path: &Path) -> Result<Vec<Point3>> {
    decode_kitti_bin(&fs::read(path)?)
}

pub fn write_kitti_bin(path: &Path, points: &[Point3]) -> Result<()> {
    fs::write(path, encode_kitti_bin(points))?;
    Ok(())
}

/// Rigid transform from the LiDAR frame to the rectified camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub r0_rect: Matrix3<f64>,
    /// `Tr_velo_to_cam` as a 3x4 matrix, extended with `[0 0 0 1]`.
    pub velo_to_cam: Matrix4<f64>,
}

impl Default for Calibration {
    /// Ideal axis permutation: camera x = -lidar y, y = -lidar z, z = lidar x.
    fn default() -> Self {
        #[rustfmt::skip]
        let velo_to_cam = Matrix4::new(
            0.0, -1.0, 0.0, 0.0,
            0.0, 0.0, -1.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        Calibration {
            r0_rect: Matrix3::identity(),
            velo_to_cam,
        }
    }
}

impl Calibration {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r0 = None;
        let mut tr = None;
        for (n, line) in text.lines().enumerate() {
            let Some((key, rest)) = line.split_once(':') else {
                continue;
            };
            let values = || -> Result<Vec<f64>> {
                rest.split_whitespace()
                    .map(|v| {
                        v.parse::<f64>().map_err(|e| Error::Parse {
                            line: n + 1,
                            message: format!("{key}: {e}"),
                        })
                    })
                    .collect()
            };
            match key.trim() {
                "R0_rect" => {
                    let v = values()?;
                    if v.len() != 9 {
                        return Err(Error::Calib(format!("R0_rect has {} values, need 9", v.len())));
                    }
                    r0 = Some(Matrix3::from_row_slice(&v));
                }
                "Tr_velo_to_cam" => {
                    let v = values()?;
                    if v.len() != 12 {
                        return Err(Error::Calib(format!("Tr_velo_to_cam has {} values, need 12", v.len())));
                    }
                    let mut m = Matrix4::identity();
                    for r in 0..3 {
                        for c in 0..4 {
                            m[(r, c)] = v[r * 4 + c];
                        }
                    }
                    tr = Some(m);
                }
                _ => {}
            }
        }
        match (r0, tr) {
            (Some(r0_rect), Some(velo_to_cam)) => Ok(Calibration { r0_rect, velo_to_cam }),
            (None, _) => Err(Error::Calib("missing R0_rect".into())),
            (_, None) => Err(Error::Calib("missing Tr_velo_to_cam".into())),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Calibration::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("R0_rect:");
        for r in 0..3 {
            for c in 0..3 {
                write!(s, " {:e}", self.r0_rect[(r, c)]).unwrap();
            }
        }
        s.push_str("\nTr_velo_to_cam:");
        for r in 0..3 {
            for c in 0..4 {
                write!(s, " {:e}", self.velo_to_cam[(r, c)]).unwrap();
            }
        }
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// LiDAR to rectified camera, homogeneous.
    pub fn lidar_to_camera(&self) -> Matrix4<f64> {
        let mut r0 = Matrix4::identity();
        r0.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r0_rect);
        r0 * self.velo_to_cam
    }

    pub fn camera_to_lidar(&self) -> Result<Matrix4<f64>> {
        self.lidar_to_camera()
            .try_inverse()
            .ok_or_else(|| Error::Calib("LiDAR-to-camera transform is singular".into()))
    }
}

fn apply(m: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    (m * Vector4::new(p.x, p.y, p.z, 1.0)).xyz()
}

/// One parsed line of a label or result file.
#[derive(Clone, Debug, PartialEq)]
pub struct KittiObject {
    pub kind: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    /// `(h, w, l)`
    pub dimensions: [f64; 3],
    /// Bottom-center in rectified camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiObject {
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("field {}: `{}`: {e}", i + 1, fields[i]),
            })
        };
        Ok(KittiObject {
            kind: fields[0].to_string(),
            truncation: num(1)?,
            occlusion: num(2)? as i32,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        })
    }

    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.3} {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
            self.kind,
            self.truncation,
            self.occlusion,
            self.alpha,
            self.bbox[0],
            self.bbox[1],
            self.bbox[2],
            self.bbox[3],
            self.dimensions[0],
            self.dimensions[1],
            self.dimensions[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y,
        );
        if let Some(score) = self.score {
            write!(s, " {score:.4}").unwrap();
        }
        s
    }

    /// Sensor-frame box, or `None` for types outside the three classes.
    pub fn to_box(&self, calib: &Calibration) -> Result<Option<Box3D>> {
        let Some(class) = ObjectClass::from_kitti_name(&self.kind) else {
            return Ok(None);
        };
        let [h, w, l] = self.dimensions;
        let loc = Vector3::from(self.location);
        let (s, c) = self.rotation_y.sin_cos();
        let rot = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        let to_lidar = calib.camera_to_lidar()?;
        // Object frame in camera axes: x along the heading, y down, z to the
        // object's left.
        let corners = std::array::from_fn(|i| {
            let x = if i & 0b100 != 0 { -l / 2.0 } else { l / 2.0 };
            let y = if i & 0b010 != 0 { 0.0 } else { -h };
            let z = if i & 0b001 != 0 { -w / 2.0 } else { w / 2.0 };
            apply(&to_lidar, &(rot * Vector3::new(x, y, z) + loc))
        });
        Ok(Some(Box3D { corners, class }))
    }

    /// KITTI description of an arbitrary 8-corner box, fitted as an upright
    /// box in camera coordinates.
    pub fn from_box(b: &Box3D, calib: &Calibration, score: Option<f64>) -> Self {
        let to_cam = calib.lidar_to_camera();
        let (forward, _, up) = b.axes();
        let (l, w, h) = b.dimensions();
        let bottom = b.center() - up / 2.0;
        let loc = apply(&to_cam, &bottom);
        let heading = to_cam.fixed_view::<3, 3>(0, 0) * forward;
        let rotation_y = (-heading.z).atan2(heading.x);
        let alpha = rotation_y - loc.x.atan2(loc.z);
        KittiObject {
            kind: b.class.kitti_name().to_string(),
            truncation: if score.is_some() { -1.0 } else { 0.0 },
            occlusion: if score.is_some() { -1 } else { 0 },
            alpha,
            bbox: [0.0; 4],
            dimensions: [h, w, l],
            location: [loc.x, loc.y, loc.z],
            rotation_y,
            score,
        }
    }
}

pub fn parse_kitti_objects(text: &str) -> Result<Vec<KittiObject>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| KittiObject::parse(l, n + 1))
        .collect()
}

/// Labels converted to sensor-frame boxes. Types other than Car,
/// Pedestrian and Cyclist (including `DontCare`) are dropped.
pub fn parse_kitti_label(text: &str, calib: &Calibration) -> Result<Vec<(Box3D, Option<f64>)>> {
    let mut out = Vec::new();
    for obj in parse_kitti_objects(text)? {
        if let Some(b) = obj.to_box(calib)? {
            out.push((b, obj.score));
        }
    }
    Ok(out)
}

pub fn read_kitti_label(label_path: &Path, calib_path: &Path) -> Result<Vec<Box3D>> {
    let calib = Calibration::read(calib_path)?;
    let text = fs::read_to_string(label_path)?;
    Ok(parse_kitti_label(&text, &calib)?.into_iter().map(|(b, _)| b).collect())
}

pub fn format_kitti_label(boxes: &[Box3D], calib: &Calibration) -> String {
    boxes
        .iter()
        .map(|b| KittiObject::from_box(b, calib, None).to_line() + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn decodes_two_points() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, 4.0, 5.0, 6.0, 0.1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes.len(), 32);
        let pts = decode_kitti_bin(&bytes).unwrap();
        assert_eq!(
            pts,
            vec![Point3::new(1.0, 2.0, 3.0, 0.5), Point3::new(4.0, 5.0, 6.0, 0.1)]
        );
        assert_eq!(encode_kitti_bin(&pts), bytes);
    }

    #[test]
    fn empty_and_ragged_scans() {
        assert!(decode_kitti_bin(&[]).unwrap().is_empty());
        assert!(matches!(decode_kitti_bin(&[0u8; 17]), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_kitti_bin(Path::new("/nonexistent/000000.bin")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn dontcare_dropped_and_empty_label() {
        let calib = Calibration::default();
        let text = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n\
                    Van 0.00 0 -1.5 0 0 0 0 2.0 1.8 4.5 1.0 1.6 10.0 0.1\n";
        assert!(parse_kitti_label(text, &calib).unwrap().is_empty());
        assert!(parse_kitti_label("", &calib).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "Car 0 0 0 0 0 0 0 1 1 1 0 0 5 0\nCar 0 0 0 0 0 0 0 1 1 x 0 0 5 0\n";
        match parse_kitti_label(text, &Calibration::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn calib_requires_both_matrices() {
        assert!(matches!(
            Calibration::parse("R0_rect: 1 0 0 0 1 0 0 0 1\n"),
            Err(Error::Calib(_))
        ));
        let c = Calibration::default();
        assert_eq!(Calibration::parse(&c.to_text()).unwrap(), c);
    }

    /// Camera-origin cube, checked against a hand-inverted rigid transform.
    #[test]
    fn cube_at_camera_origin() {
        let (a, t) = (0.1f64, [0.27, -0.08, -0.06]);
        #[rustfmt::skip]
        let rot = [
            [a.sin(), -a.cos(), 0.0],
            [0.0, 0.0, -1.0],
            [a.cos(), a.sin(), 0.0],
        ];
        let mut tr = Matrix4::identity();
        for r in 0..3 {
            for c in 0..3 {
                tr[(r, c)] = rot[r][c];
            }
            tr[(r, 3)] = t[r];
        }
        let calib = Calibration {
            r0_rect: Matrix3::identity(),
            velo_to_cam: tr,
        };
        let side = 2.0;
        let line = format!("Car 0 0 0 0 0 0 0 {side} {side} {side} 0 0 0 0");
        let (b, _) = parse_kitti_label(&line, &calib).unwrap().remove(0);
        // Center in camera coordinates is (0, -side/2, 0); lidar = R^T (cam - t).
        let cam = [0.0, -side / 2.0, 0.0];
        let expect: Vec<f64> = (0..3)
            .map(|j| (0..3).map(|i| rot[i][j] * (cam[i] - t[i])).sum())
            .collect();
        assert_abs_diff_eq!(b.center(), Vector3::from_vec(expect), epsilon = 1e-9);
        let (l, w, h) = b.dimensions();
        for d in [l, w, h] {
            assert_abs_diff_eq!(d, side, epsilon = 1e-9);
        }
    }

    #[test]
    fn nominal_calibration_axes() {
        // Car 10 m ahead, heading along lidar +x: rotation_y = -pi/2.
        let line = "Car 0 0 0 0 0 0 0 1.5 1.8 4.0 0 1.7 10 -1.5707963267948966";
        let (b, _) = parse_kitti_label(line, &Calibration::default()).unwrap().remove(0);
        assert_abs_diff_eq!(b.center(), Vector3::new(10.0, 0.0, -0.95), epsilon = 1e-9);
        assert_abs_diff_eq!(b.yaw(), 0.0, epsilon = 1e-9);
        // Front-top-left corner is ahead, to the left, on top.
        assert_abs_diff_eq!(b.corners[0], Vector3::new(12.0, 0.9, -0.2), epsilon = 1e-9);
    }

    #[test]
    fn box_line_round_trip() {
        let calib = Calibration::default();
        let b = Box3D::upright(
            Vector3::new(12.5, -3.25, -0.9),
            3.9,
            1.6,
            1.5,
            0.7,
            ObjectClass::Cyclist,
        );
        let line = KittiObject::from_box(&b, &calib, Some(0.75)).to_line();
        let (back, score) = parse_kitti_label(&line, &calib).unwrap().remove(0);
        assert_eq!(score, Some(0.75));
        assert_eq!(back.class, ObjectClass::Cyclist);
        assert!(back.max_corner_distance(&b) < 5e-3, "{}", back.max_corner_distance(&b));
    }
}
