//! From network maps to detections: candidate decoding, neighbor-count
//! scoring, distance-based suppression, BEV IoU and AP evaluation.

mod eval;
mod iou;
mod nms;
mod output;

pub use eval::{evaluate, evaluate_per_class, Detection, EvalMetrics};
pub use iou::{bev_iou, footprint, polygon_area};
pub use nms::{
    corner_distance, detect, extract_candidates, nms, rank_order, score_candidates, Candidate, NmsConfig, PerClass,
};
pub use output::{format_json_lines, format_kitti_results, parse_json_lines, DetectionRecord};
