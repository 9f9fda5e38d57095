use serde::{Deserialize, Serialize};

use super::nms::Candidate;
use crate::dataset::{Calibration, KittiObject};
use crate::error::{Error, Result};
use crate::geom::{Box3D, ObjectClass};

/// KITTI result format: one label line per detection with the confidence
/// as the trailing score. 2D boxes are left as zeros.
pub fn format_kitti_results(dets: &[Candidate], calib: &Calibration) -> String {
    dets.iter()
        .map(|d| KittiObject::from_box(&d.bbox, calib, Some(d.confidence as f64)).to_line() + "\n")
        .collect()
}

/// JSON-lines record carrying the raw corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub class: ObjectClass,
    pub confidence: f32,
    pub score: usize,
    pub pixel: [usize; 2],
    pub corners: [[f64; 3]; 8],
}

impl DetectionRecord {
    pub fn from_candidate(c: &Candidate) -> Self {
        DetectionRecord {
            class: c.class(),
            confidence: c.confidence,
            score: c.score,
            pixel: [c.pixel.0, c.pixel.1],
            corners: c.bbox.corners.map(|v| [v.x, v.y, v.z]),
        }
    }

    pub fn to_candidate(&self) -> Candidate {
        Candidate {
            bbox: Box3D {
                corners: self.corners.map(|[x, y, z]| nalgebra::Vector3::new(x, y, z)),
                class: self.class,
            },
            confidence: self.confidence,
            score: self.score,
            pixel: (self.pixel[0], self.pixel[1]),
        }
    }
}

pub fn format_json_lines(dets: &[Candidate]) -> String {
    dets.iter()
        .map(|d| serde_json::to_string(&DetectionRecord::from_candidate(d)).expect("serializable") + "\n")
        .collect()
}

pub fn parse_json_lines(text: &str) -> Result<Vec<Candidate>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<DetectionRecord>(l)
                .map(|r| r.to_candidate())
                .map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}
