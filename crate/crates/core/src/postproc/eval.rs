use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::iou::bev_iou;
use crate::geom::{Box3D, ObjectClass};

/// A detection to be scored against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    /// 11-point interpolated average precision.
    pub ap: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
}

/// Matches detections to same-class ground truth of the same scene in
/// descending confidence order; each ground truth matches at most once, at
/// BEV IoU ≥ `iou_threshold`.
///
/// With neither detections nor ground truth every metric is 1; with no
/// detections precision is 0.
pub fn evaluate(detections: &[Vec<Detection>], ground_truth: &[Vec<Box3D>], iou_threshold: f64) -> EvalMetrics {
    let gt_total: usize = ground_truth.iter().map(Vec::len).sum();
    let mut order: Vec<(usize, usize)> = detections
        .iter()
        .enumerate()
        .flat_map(|(s, d)| (0..d.len()).map(move |i| (s, i)))
        .collect();
    if order.is_empty() && gt_total == 0 {
        return EvalMetrics {
            precision: 1.0,
            recall: 1.0,
            ap: 1.0,
            true_positives: 0,
            false_positives: 0,
            ground_truths: 0,
        };
    }
    order.sort_by(|&(sa, ia), &(sb, ib)| {
        detections[sb][ib]
            .confidence
            .total_cmp(&detections[sa][ia].confidence)
            .then((sa, ia).cmp(&(sb, ib)))
    });

    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(order.len());
    for (s, i) in order {
        let det = &detections[s][i];
        let gts = ground_truth.get(s).map(Vec::as_slice).unwrap_or(&[]);
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, b)| !matched[s][*g] && b.class == det.bbox.class)
            .map(|(g, b)| (g, bev_iou(&det.bbox, b)))
            .filter(|&(_, iou)| iou >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((g, _)) => {
                matched[s][g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let recall = if gt_total == 0 {
            0.0
        } else {
            tp as f64 / gt_total as f64
        };
        curve.push((recall, tp as f64 / (tp + fp) as f64));
    }

    let ap = (0..=10)
        .map(|k| {
            let t = k as f64 / 10.0;
            curve
                .iter()
                .filter(|(r, _)| *r >= t - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0;
    EvalMetrics {
        precision: if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if gt_total == 0 {
            0.0
        } else {
            tp as f64 / gt_total as f64
        },
        ap: if gt_total == 0 { 0.0 } else { ap },
        true_positives: tp,
        false_positives: fp,
        ground_truths: gt_total,
    }
}

/// [`evaluate`] restricted to each class that appears in either list.
pub fn evaluate_per_class(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<Box3D>],
    iou_threshold: f64,
) -> BTreeMap<ObjectClass, EvalMetrics> {
    let mut out = BTreeMap::new();
    for class in ObjectClass::ALL {
        let dets: Vec<Vec<Detection>> = detections
            .iter()
            .map(|d| d.iter().filter(|d| d.bbox.class == class).cloned().collect())
            .collect();
        let gts: Vec<Vec<Box3D>> = ground_truth
            .iter()
            .map(|g| g.iter().filter(|b| b.class == class).cloned().collect())
            .collect();
        if dets.iter().all(Vec::is_empty) && gts.iter().all(Vec::is_empty) {
            continue;
        }
        out.insert(class, evaluate(&dets, &gts, iou_threshold));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn car(x: f64) -> Box3D {
        Box3D::upright(Vector3::new(x, 0.0, -1.0), 4.0, 1.8, 1.5, 0.0, ObjectClass::Car)
    }

    fn det(b: Box3D, confidence: f64) -> Detection {
        Detection { bbox: b, confidence }
    }

    #[test]
    fn perfect_detections() {
        let gt = vec![vec![car(10.0), car(20.0)], vec![car(15.0)]];
        let dets: Vec<Vec<Detection>> = gt
            .iter()
            .map(|g| g.iter().map(|b| det(b.clone(), 0.9)).collect())
            .collect();
        let m = evaluate(&dets, &gt, 0.5);
        assert_eq!((m.precision, m.recall, m.ap), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_detections() {
        let m = evaluate(&[vec![]], &[vec![car(10.0)]], 0.5);
        assert_eq!((m.recall, m.precision, m.ap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn false_positive_ranked_first() {
        let dets = vec![vec![det(car(30.0), 0.95), det(car(10.0), 0.6)]];
        let m = evaluate(&dets, &[vec![car(10.0)]], 0.5);
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        assert_eq!((m.true_positives, m.false_positives), (1, 1));
        assert!((m.ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detection_counts_once() {
        let dets = vec![vec![det(car(10.0), 0.9), det(car(10.1), 0.8)]];
        let m = evaluate(&dets, &[vec![car(10.0)]], 0.5);
        assert_eq!((m.true_positives, m.false_positives), (1, 1));
    }

    #[test]
    fn class_mismatch_does_not_match() {
        let ped = Box3D {
            class: ObjectClass::Pedestrian,
            ..car(10.0)
        };
        let per = evaluate_per_class(&[vec![det(ped, 0.9)]], &[vec![car(10.0)]], 0.5);
        assert_eq!(per[&ObjectClass::Car].recall, 0.0);
        assert_eq!(per[&ObjectClass::Pedestrian].precision, 0.0);
        assert!(!per.contains_key(&ObjectClass::Cyclist));
    }
}
