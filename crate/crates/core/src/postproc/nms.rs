use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    decode_box, Box3D, BoxEncoding, FrontalViewMap, ObjectClass, FRONT_TOP_LEFT, NUM_CLASSES, REAR_BOTTOM_RIGHT,
};
use crate::net::CORNER_CHANNELS;
use crate::tensor::Tensor;

/// One decoded box proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub bbox: Box3D,
    /// Softmax probability of the box's class at the source pixel.
    pub confidence: f32,
    /// Neighbor count including the candidate itself; 0 until scored.
    pub score: usize,
    /// `(row, col)` of the source pixel.
    pub pixel: (usize, usize),
}

impl Candidate {
    pub fn class(&self) -> ObjectClass {
        self.bbox.class
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerClass {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl PerClass {
    pub fn get(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    /// `δ`: corner-distance radius for counting neighbors, meters.
    pub neighbor_radius: PerClass,
    /// `T`: corner-distance below which a lower-ranked box is suppressed.
    pub suppression: PerClass,
    /// Candidates with fewer neighbors (self included) are discarded.
    pub min_score: usize,
    /// Minimum class probability for a pixel to propose a box.
    pub confidence_threshold: f32,
}

impl Default for NmsConfig {
    fn default() -> Self {
        let suppression = PerClass {
            car: 0.7,
            pedestrian: 0.3,
            cyclist: 0.3,
        };
        NmsConfig {
            neighbor_radius: PerClass {
                car: 2.0 * suppression.car,
                pedestrian: 2.0 * suppression.pedestrian,
                cyclist: 2.0 * suppression.cyclist,
            },
            suppression,
            min_score: 5,
            confidence_threshold: 0.5,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = ObjectClass::ALL
            .iter()
            .all(|&c| self.neighbor_radius.get(c) > 0.0 && self.suppression.get(c) > 0.0);
        if !ok || self.min_score == 0 {
            return Err(Error::invalid(
                "NMS radii and thresholds must be positive and min_score at least 1",
            ));
        }
        Ok(())
    }
}

/// `‖a.c₁ − b.c₁‖ + ‖a.c₈ − b.c₈‖` over the front-top-left and
/// rear-bottom-right corners.
pub fn corner_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.corners[FRONT_TOP_LEFT] - b.corners[FRONT_TOP_LEFT]).norm()
        + (a.corners[REAR_BOTTOM_RIGHT] - b.corners[REAR_BOTTOM_RIGHT]).norm()
}

/// Decodes a box at every valid pixel whose most probable class is an
/// object with probability at least the confidence threshold.
pub fn extract_candidates(
    objectness: &Tensor,
    corners: &Tensor,
    map: &FrontalViewMap,
    cfg: &NmsConfig,
) -> Result<Vec<Candidate>> {
    let (h, w) = (map.height(), map.width());
    if objectness.shape() != [NUM_CLASSES, h, w] || corners.shape() != [CORNER_CHANNELS, h, w] {
        return Err(Error::invalid(format!(
            "output maps {:?} / {:?} do not match a {h}x{w} frontal view",
            objectness.shape(),
            corners.shape()
        )));
    }
    let n = h * w;
    let (prob, off) = (objectness.data(), corners.data());
    let mut out = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let Some(point) = map.point_at(row, col) else { continue };
            let p = row * w + col;
            let (best, conf) = (1..NUM_CLASSES).fold((0, prob[p]), |(bk, bv), k| {
                if prob[k * n + p] > bv {
                    (k, prob[k * n + p])
                } else {
                    (bk, bv)
                }
            });
            let Some(class) = ObjectClass::from_id(best as u8) else {
                continue;
            };
            if conf < cfg.confidence_threshold {
                continue;
            }
            let enc = BoxEncoding(std::array::from_fn(|ch| off[ch * n + p] as f64));
            // A return exactly at the sensor origin has no viewing direction.
            let Ok(bbox) = decode_box(&point, &enc, class) else {
                continue;
            };
            out.push(Candidate {
                bbox,
                confidence: conf,
                score: 0,
                pixel: (row, col),
            });
        }
    }
    Ok(out)
}

type Cell = (i64, i64, i64);

fn cell_of(b: &Box3D, size: f64) -> Cell {
    let c = b.corners[FRONT_TOP_LEFT] / size;
    (c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64)
}

/// Sets each candidate's score to the number of same-class candidates
/// (itself included) whose corner distance to it is below `δ_class`.
pub fn score_candidates(cands: &mut [Candidate], cfg: &NmsConfig) {
    for class in ObjectClass::ALL {
        let radius = cfg.neighbor_radius.get(class);
        let members: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].class() == class).collect();
        // Neighbors have front-top-left corners closer than the radius, so
        // they sit in adjacent grid cells.
        let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
        for &i in &members {
            grid.entry(cell_of(&cands[i].bbox, radius)).or_default().push(i);
        }
        let scores: Vec<usize> = members
            .iter()
            .map(|&i| {
                let (cx, cy, cz) = cell_of(&cands[i].bbox, radius);
                let mut count = 0;
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if let Some(js) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                                count += js
                                    .iter()
                                    .filter(|&&j| corner_distance(&cands[i].bbox, &cands[j].bbox) < radius)
                                    .count();
                            }
                        }
                    }
                }
                count
            })
            .collect();
        for (&i, s) in members.iter().zip(scores) {
            cands[i].score = s;
        }
    }
}

/// Ranking used by NMS: score, then confidence (both descending), then
/// pixel position.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .cmp(&a.score)
        .then(b.confidence.total_cmp(&a.confidence))
        .then(a.pixel.cmp(&b.pixel))
}

/// Drops candidates scoring below `min_score`, then greedily keeps the best
/// ranked box and removes same-class boxes within `T_class` of it.
pub fn nms(cands: Vec<Candidate>, cfg: &NmsConfig) -> Vec<Candidate> {
    let mut ranked: Vec<Candidate> = cands.into_iter().filter(|c| c.score >= cfg.min_score).collect();
    ranked.sort_by(rank_order);
    let mut kept: Vec<Candidate> = Vec::new();
    for c in ranked {
        let t = cfg.suppression.get(c.class());
        let suppressed = kept
            .iter()
            .any(|k| k.class() == c.class() && corner_distance(&k.bbox, &c.bbox) < t);
        if !suppressed {
            kept.push(c);
        }
    }
    kept
}

/// Extraction, scoring and suppression in one call.
pub fn detect(objectness: &Tensor, corners: &Tensor, map: &FrontalViewMap, cfg: &NmsConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let mut cands = extract_candidates(objectness, corners, map, cfg)?;
    score_candidates(&mut cands, cfg);
    Ok(nms(cands, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{encode_box, encode_frontal_view, Point3, ProjectionConfig};
    use nalgebra::Vector3;

    fn car_at(x: f64, y: f64) -> Box3D {
        Box3D::upright(Vector3::new(x, y, -1.0), 4.0, 1.8, 1.5, 0.3, ObjectClass::Car)
    }

    fn cand(b: Box3D, conf: f32, col: usize) -> Candidate {
        Candidate {
            bbox: b,
            confidence: conf,
            score: 0,
            pixel: (0, col),
        }
    }

    #[test]
    fn identical_boxes() {
        let cfg = NmsConfig::default();
        let mut c: Vec<Candidate> = (0..6).map(|i| cand(car_at(10.0, 0.0), 0.9, i)).collect();
        score_candidates(&mut c, &cfg);
        assert!(c.iter().all(|c| c.score == 6));
        let kept = nms(c, &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].pixel, (0, 0));
    }

    #[test]
    fn neighbor_boundary_is_strict() {
        // Dyadic coordinates keep the distance sum exactly at the radius.
        let mut cfg = NmsConfig::default();
        cfg.neighbor_radius.car = 1.5;
        let a = Box3D::upright(Vector3::new(10.0, 0.0, -1.0), 4.0, 2.0, 1.5, 0.0, ObjectClass::Car);
        let b = a.transformed(&nalgebra::Matrix3::identity(), &Vector3::new(0.75, 0.0, 0.0));
        assert_eq!(corner_distance(&a, &b), 1.5);
        let mut c = vec![cand(a, 0.9, 0), cand(b, 0.9, 1)];
        score_candidates(&mut c, &cfg);
        assert_eq!((c[0].score, c[1].score), (1, 1));
        cfg.neighbor_radius.car = 1.5000001;
        score_candidates(&mut c, &cfg);
        assert_eq!((c[0].score, c[1].score), (2, 2));
    }

    #[test]
    fn isolated_boxes_are_discarded() {
        let cfg = NmsConfig::default();
        let mut c: Vec<Candidate> = (0..10)
            .map(|i| cand(car_at(5.0 + 5.0 * i as f64, 0.0), 0.9, i))
            .collect();
        score_candidates(&mut c, &cfg);
        assert!(nms(c, &cfg).is_empty());
    }

    #[test]
    fn classes_do_not_interact() {
        let cfg = NmsConfig::default();
        let car = car_at(10.0, 0.0);
        let ped = Box3D {
            class: ObjectClass::Pedestrian,
            ..car.clone()
        };
        let mut c: Vec<Candidate> = (0..5).map(|i| cand(car.clone(), 0.9, i)).collect();
        c.extend((5..10).map(|i| cand(ped.clone(), 0.8, i)));
        score_candidates(&mut c, &cfg);
        assert!(c.iter().all(|c| c.score == 5));
        assert_eq!(nms(c, &cfg).len(), 2);
    }

    #[test]
    fn extraction_gates_on_validity_and_class() {
        let beams = ProjectionConfig::default();
        let p = Point3::new(10.0, 0.0, -0.5, 0.3);
        let map = encode_frontal_view(&[p], &beams);
        let (h, w) = (beams.height, beams.width);
        let (row, col) = crate::geom::project(&p, &beams).unwrap();
        let truth = car_at(11.0, 0.0);
        let enc = encode_box(&p, &truth).unwrap();
        let mut obj = Tensor::zeros(&[4, h, w]);
        obj.channel_mut(0).fill(1.0);
        let mut cor = Tensor::zeros(&[24, h, w]);
        let cfg = NmsConfig::default();
        assert!(extract_candidates(&obj, &cor, &map, &cfg).unwrap().is_empty());

        // Car everywhere, but only one pixel has a return.
        obj.channel_mut(0).fill(0.1);
        obj.channel_mut(1).fill(0.9);
        for ch in 0..24 {
            cor.set3(ch, row, col, enc.0[ch] as f32);
        }
        let c = extract_candidates(&obj, &cor, &map, &cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].pixel, (row, col));
        assert_eq!(c[0].class(), ObjectClass::Car);
        assert!(c[0].bbox.max_corner_distance(&truth) < 1e-5);
    }
}
