use std::cmp::Ordering;

use crate::geometry::BBox;

pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// A scored box before suppression.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: usize,
    pub anchor_index: usize,
}

/// Descending score, then ascending anchor index.
pub fn priority_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.anchor_index.cmp(&b.anchor_index))
}

/// Greedy same-class suppression; returns kept candidates in priority order.
pub fn nms(candidates: &[Candidate], iou_threshold: f64) -> Vec<Candidate> {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| priority_order(a, b));
    let mut kept: Vec<Candidate> = Vec::new();
    for c in order {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == c.class_id && k.bbox.iou(&c.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*c);
        }
    }
    kept
}
