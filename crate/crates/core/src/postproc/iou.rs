use nalgebra::Vector2;

use crate::geom::Box3D;

type P2 = Vector2<f64>;

fn cross(o: &P2, a: &P2, b: &P2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain).
fn convex_hull(mut pts: Vec<P2>) -> Vec<P2> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<P2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &P2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW `clip`.
fn clip_polygon(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        let inside = |p: &P2| cross(&a, &b, p) >= 0.0;
        for j in 0..input.len() {
            let (cur, prev) = (input[j], input[(j + input.len() - 1) % input.len()]);
            let intersect = || {
                let (d1, d2) = (cross(&a, &b, &prev), cross(&a, &b, &cur));
                prev + (cur - prev) * (d1 / (d1 - d2))
            };
            match (inside(&prev), inside(&cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(intersect()),
                (false, true) => {
                    out.push(intersect());
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Bird's-eye footprint: convex hull of the corners projected on XY.
pub fn footprint(b: &Box3D) -> Vec<P2> {
    convex_hull(b.corners.iter().map(|c| P2::new(c.x, c.y)).collect())
}

/// Intersection over union of the XY footprints; 0 for degenerate boxes.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let (pa, pb) = (footprint(a), footprint(b));
    if pa.len() < 3 || pb.len() < 3 {
        return 0.0;
    }
    let (area_a, area_b) = (polygon_area(&pa), polygon_area(&pb));
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let inter = clip_polygon(&pa, &pb);
    let inter = if inter.len() < 3 { 0.0 } else { polygon_area(&inter) };
    (inter / (area_a + area_b - inter)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ObjectClass;
    use nalgebra::Vector3;

    fn unit(x: f64, y: f64, yaw: f64) -> Box3D {
        Box3D::upright(Vector3::new(x, y, 0.0), 1.0, 1.0, 1.0, yaw, ObjectClass::Car)
    }

    #[test]
    fn identical_disjoint_and_half_overlap() {
        assert!((bev_iou(&unit(0.0, 0.0, 0.3), &unit(0.0, 0.0, 0.3)) - 1.0).abs() < 1e-12);
        assert_eq!(bev_iou(&unit(0.0, 0.0, 0.0), &unit(3.0, 0.0, 0.0)), 0.0);
        assert!((bev_iou(&unit(0.0, 0.0, 0.0), &unit(0.5, 0.0, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_is_zero() {
        let flat = Box3D::upright(Vector3::zeros(), 0.0, 1.0, 1.0, 0.0, ObjectClass::Car);
        assert_eq!(bev_iou(&flat, &unit(0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn rotated_square_in_square() {
        // A unit square rotated 45 degrees inside a 2x2 square: area 1 of 4.
        let big = Box3D::upright(Vector3::zeros(), 2.0, 2.0, 1.0, 0.0, ObjectClass::Car);
        let iou = bev_iou(&big, &unit(0.0, 0.0, std::f64::consts::FRAC_PI_4));
        assert!((iou - 0.25).abs() < 1e-12);
    }
}
