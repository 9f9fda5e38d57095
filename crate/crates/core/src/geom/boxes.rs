//! 8-corner boxes and their point-relative, rotation-normalized encoding.
//!
//! Corner `i` (0-based) of a box is described by three bits of `i`:
//! bit 2 selects rear (set) or front, bit 1 bottom or top, bit 0 right or
//! left, all relative to the box heading. So corner 0 is front-top-left and
//! corner 7 is rear-bottom-right; these two are the pair NMS compares.

use nalgebra::{Matrix3, Vector3};

use super::{ObjectClass, Point3};
use crate::error::{Error, Result};

pub const CORNER_COUNT: usize = 8;
pub const FRONT_TOP_LEFT: usize = 0;
pub const REAR_BOTTOM_RIGHT: usize = 7;

const REAR: usize = 0b100;
const BOTTOM: usize = 0b010;
const RIGHT: usize = 0b001;

#[derive(Clone, Debug, PartialEq)]
pub struct Box3D {
    pub corners: [Vector3<f64>; CORNER_COUNT],
    pub class: ObjectClass,
}

impl Box3D {
    /// Box with vertical faces, `length` along the heading `yaw`
    /// (counter-clockwise from +x), `width` across it.
    pub fn upright(center: Vector3<f64>, length: f64, width: f64, height: f64, yaw: f64, class: ObjectClass) -> Self {
        let forward = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let left = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
        let up = Vector3::z();
        Box3D::from_axes(center, forward * length, left * width, up * height, class)
    }

    /// Parallelepiped spanned by full-length edge vectors around `center`.
    pub fn from_axes(
        center: Vector3<f64>,
        forward: Vector3<f64>,
        left: Vector3<f64>,
        up: Vector3<f64>,
        class: ObjectClass,
    ) -> Self {
        let corners = std::array::from_fn(|i| {
            let f = if i & REAR != 0 { -0.5 } else { 0.5 };
            let u = if i & BOTTOM != 0 { -0.5 } else { 0.5 };
            let l = if i & RIGHT != 0 { -0.5 } else { 0.5 };
            center + forward * f + up * u + left * l
        });
        Box3D { corners, class }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.corners.iter().sum::<Vector3<f64>>() / CORNER_COUNT as f64
    }

    fn face_mean(&self, bit: usize, set: bool) -> Vector3<f64> {
        self.corners
            .iter()
            .enumerate()
            .filter(|(i, _)| (i & bit != 0) == set)
            .map(|(_, c)| c)
            .sum::<Vector3<f64>>()
            / 4.0
    }

    /// Full edge vectors `(front - rear, left - right, top - bottom)`,
    /// averaged over the four parallel edges each.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        (
            self.face_mean(REAR, false) - self.face_mean(REAR, true),
            self.face_mean(RIGHT, false) - self.face_mean(RIGHT, true),
            self.face_mean(BOTTOM, false) - self.face_mean(BOTTOM, true),
        )
    }

    /// `(length, width, height)`
    pub fn dimensions(&self) -> (f64, f64, f64) {
        let (f, l, u) = self.axes();
        (f.norm(), l.norm(), u.norm())
    }

    /// Heading angle of the front direction projected on the XY plane.
    pub fn yaw(&self) -> f64 {
        let (f, _, _) = self.axes();
        f.y.atan2(f.x)
    }

    /// Whether `p` lies inside the box grown by `eps` on every side. Assumes
    /// mutually orthogonal edges.
    pub fn contains(&self, p: &Vector3<f64>, eps: f64) -> bool {
        let d = p - self.center();
        let (f, l, u) = self.axes();
        [f, l, u].iter().all(|axis| {
            let len = axis.norm();
            len > 0.0 && (d.dot(axis) / len).abs() <= len / 2.0 + eps
        })
    }

    pub fn transformed(&self, rot: &Matrix3<f64>, shift: &Vector3<f64>) -> Self {
        Box3D {
            corners: self.corners.map(|c| rot * c + shift),
            class: self.class,
        }
    }

    pub fn max_corner_distance(&self, other: &Box3D) -> f64 {
        self.corners
            .iter()
            .zip(&other.corners)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Corner offsets of a box relative to an observing point, concatenated in
/// corner order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxEncoding(pub [f64; 24]);

impl BoxEncoding {
    pub fn offset(&self, corner: usize) -> Vector3<f64> {
        Vector3::new(self.0[3 * corner], self.0[3 * corner + 1], self.0[3 * corner + 2])
    }

    pub fn from_f32(values: &[f32]) -> Self {
        assert_eq!(values.len(), 24, "box encodings have 24 components");
        BoxEncoding(std::array::from_fn(|i| values[i] as f64))
    }
}

/// Azimuth and elevation of `p` as seen from the sensor.
pub fn observation_angles(p: &Point3) -> Result<(f64, f64)> {
    angles_of(&p.position())
}

fn angles_of(v: &Vector3<f64>) -> Result<(f64, f64)> {
    if *v == Vector3::zeros() {
        return Err(Error::UndefinedAngle);
    }
    Ok((v.y.atan2(v.x), v.z.atan2(v.x.hypot(v.y))))
}

pub fn rotation_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Elevation tilt about y. Positive `phi` raises the x axis towards +z, so
/// `rotation(theta, phi)` carries the x axis onto the viewing ray.
fn tilt_y(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Observation frame `R = R_z(theta) * R_y(phi)`.
pub fn rotation(theta: f64, phi: f64) -> Matrix3<f64> {
    rotation_z(theta) * tilt_y(phi)
}

/// `c'_i = R^T (c_i - p)` for all eight corners.
pub fn encode_box(p: &Point3, b: &Box3D) -> Result<BoxEncoding> {
    encode_box_at(&p.position(), b)
}

/// [`encode_box`] for an observing position given in double precision.
pub fn encode_box_at(origin: &Vector3<f64>, b: &Box3D) -> Result<BoxEncoding> {
    let (theta, phi) = angles_of(origin)?;
    let rt = rotation(theta, phi).transpose();
    let mut out = [0.0; 24];
    for (i, c) in b.corners.iter().enumerate() {
        let o = rt * (c - origin);
        out[3 * i..3 * i + 3].copy_from_slice(o.as_slice());
    }
    Ok(BoxEncoding(out))
}

/// Inverse of [`encode_box`]: `c_i = R c'_i + p`.
pub fn decode_box(p: &Point3, enc: &BoxEncoding, class: ObjectClass) -> Result<Box3D> {
    decode_box_at(&p.position(), enc, class)
}

pub fn decode_box_at(origin: &Vector3<f64>, enc: &BoxEncoding, class: ObjectClass) -> Result<Box3D> {
    let (theta, phi) = angles_of(origin)?;
    let r = rotation(theta, phi);
    Ok(Box3D {
        corners: std::array::from_fn(|i| r * enc.offset(i) + origin),
        class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn forward_axis_has_identity_frame() {
        let (t, p) = observation_angles(&Point3::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!((t, p), (0.0, 0.0));
        assert_eq!(rotation(t, p), Matrix3::identity());
    }

    #[test]
    fn left_axis_azimuth() {
        let (t, _) = observation_angles(&Point3::new(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(t, FRAC_PI_2);
        let v = rotation_z(t) * Vector3::x();
        assert_abs_diff_eq!(v, Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn frame_points_along_ray() {
        let p = Point3::new(3.0, -2.0, 1.5, 0.0);
        let (t, ph) = observation_angles(&p).unwrap();
        let local = rotation(t, ph).transpose() * p.position();
        assert_abs_diff_eq!(local, Vector3::new(p.position().norm(), 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn origin_has_no_frame() {
        let b = Box3D::upright(Vector3::zeros(), 1.0, 1.0, 1.0, 0.0, ObjectClass::Car);
        assert!(matches!(encode_box(&Point3::default(), &b), Err(Error::UndefinedAngle)));
    }

    #[test]
    fn identity_frame_offset() {
        let p = Point3::new(5.0, 0.0, 0.0, 0.0);
        let b = Box3D::upright(Vector3::new(5.5, 0.5, -0.5), 1.0, 1.0, 1.0, 0.0, ObjectClass::Car);
        // corner 0 is front-top-left: (6, 1, 0)
        assert_abs_diff_eq!(b.corners[0], Vector3::new(6.0, 1.0, 0.0));
        let enc = encode_box(&p, &b).unwrap();
        assert_abs_diff_eq!(enc.offset(0), Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_encoding_collapses_to_point() {
        let p = Point3::new(4.0, 2.0, -1.0, 0.0);
        let b = decode_box(&p, &BoxEncoding([0.0; 24]), ObjectClass::Cyclist).unwrap();
        for c in &b.corners {
            assert_abs_diff_eq!(*c, p.position(), epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_frame_decode() {
        let p = Point3::new(5.0, 0.0, 0.0, 0.0);
        let enc = BoxEncoding(std::array::from_fn(|i| [1.0, 1.0, 0.0][i % 3]));
        let b = decode_box(&p, &enc, ObjectClass::Car).unwrap();
        for c in &b.corners {
            assert_abs_diff_eq!(*c, Vector3::new(6.0, 1.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn corner_order_and_measurements() {
        let b = Box3D::upright(Vector3::new(10.0, 2.0, 0.0), 4.0, 2.0, 1.5, 0.3, ObjectClass::Car);
        let (l, w, h) = b.dimensions();
        assert_abs_diff_eq!(l, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.yaw(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(b.center(), Vector3::new(10.0, 2.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            b.corners[FRONT_TOP_LEFT] + b.corners[REAR_BOTTOM_RIGHT],
            2.0 * b.center(),
            epsilon = 1e-12
        );
        assert!(b.contains(&b.center(), 0.0));
        assert!(b.contains(&b.corners[3], 1e-9));
        assert!(!b.contains(&Vector3::new(10.0, 2.0, 1.0), 0.05));
    }

    fn rand_point() -> impl Strategy<Value = Point3> {
        (prop_oneof![-70.0f32..-0.5, 0.5f32..70.0], -40.0f32..40.0, -2.0f32..2.0)
            .prop_map(|(x, y, z)| Point3::new(x, y, z, 0.0))
    }

    fn rand_box() -> impl Strategy<Value = Box3D> {
        (
            (-70.0f64..70.0, -40.0f64..40.0, -2.0f64..2.0),
            (0.2f64..6.0, 0.2f64..3.0, 0.2f64..3.0),
            -3.2f64..3.2,
        )
            .prop_map(|((x, y, z), (l, w, h), yaw)| {
                Box3D::upright(Vector3::new(x, y, z), l, w, h, yaw, ObjectClass::Pedestrian)
            })
    }

    proptest! {
        #[test]
        fn frame_is_proper_rotation(t in -3.2f64..3.2, p in -1.5f64..1.5) {
            let r = rotation(t, p);
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-6);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn codec_round_trip(p in rand_point(), b in rand_box()) {
            let enc = encode_box(&p, &b).unwrap();
            let back = decode_box(&p, &enc, b.class).unwrap();
            prop_assert!(back.max_corner_distance(&b) < 1e-5);
            let again = encode_box(&p, &back).unwrap();
            for (a, e) in again.0.iter().zip(enc.0.iter()) {
                prop_assert!((a - e).abs() < 1e-5);
            }
        }

        #[test]
        fn encoding_invariant_under_z_rotation(p in rand_point(), b in rand_box(), alpha in -3.2f64..3.2) {
            let rz = rotation_z(alpha);
            let e1 = encode_box_at(&p.position(), &b).unwrap();
            let e2 = encode_box_at(&(rz * p.position()), &b.transformed(&rz, &Vector3::zeros())).unwrap();
            for (a, e) in e1.0.iter().zip(e2.0.iter()) {
                prop_assert!((a - e).abs() < 1e-4);
            }
        }
    }
}
