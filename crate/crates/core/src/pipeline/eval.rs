//! COCO-style average precision, boundary error and the direct baseline.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::infer::DetectionResult;
use crate::datagen::{min_enclosing_box, BinaryMask, Instance};
use crate::geometry::BBox;

/// Size strata by ground-truth mask area, scaled for 128×128 scenes.
pub const SMALL_AREA: f64 = 16.0 * 16.0;
pub const LARGE_AREA: f64 = 48.0 * 48.0;
const MAX_DETS: usize = 100;
const RECALL_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    Box,
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < SMALL_AREA,
            AreaRange::Medium => (SMALL_AREA..=LARGE_AREA).contains(&area),
            AreaRange::Large => area > LARGE_AREA,
        }
    }
}

pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct EvalDet<'a> {
    pub image_id: u64,
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
    pub mask: &'a BinaryMask,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalGt<'a> {
    pub image_id: u64,
    pub class_id: usize,
    pub bbox: BBox,
    pub mask: &'a BinaryMask,
}

impl EvalGt<'_> {
    pub fn area(&self) -> f64 {
        self.mask.count() as f64
    }
}

fn det_area(d: &EvalDet<'_>, t: IouType) -> f64 {
    match t {
        IouType::Box => d.bbox.area(),
        IouType::Mask => d.mask.count() as f64,
    }
}

fn iou(d: &EvalDet<'_>, g: &EvalGt<'_>, t: IouType) -> f64 {
    match t {
        IouType::Box => d.bbox.iou(&g.bbox),
        IouType::Mask => d.mask.iou(g.mask),
    }
}

fn total_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Order-independent ranking: score descending, then every remaining field.
pub fn canonical_order(a: &EvalDet<'_>, b: &EvalDet<'_>) -> Ordering {
    total_f64(b.score, a.score)
        .then(a.image_id.cmp(&b.image_id))
        .then(a.class_id.cmp(&b.class_id))
        .then(total_f64(a.bbox.x, b.bbox.x))
        .then(total_f64(a.bbox.y, b.bbox.y))
        .then(total_f64(a.bbox.w, b.bbox.w))
        .then(total_f64(a.bbox.h, b.bbox.h))
        .then_with(|| a.mask.data.cmp(&b.mask.data))
}

/// Outcome of matching one image/class at one IoU threshold.
struct ImageMatch {
    /// (score rank key, matched, ignored) per detection in ranked order.
    dets: Vec<(bool, bool)>,
    num_gt: usize,
}

fn match_image(dets: &[&EvalDet<'_>], gts: &[&EvalGt<'_>], t: IouType, thr: f64, range: AreaRange) -> ImageMatch {
    // non-ignored ground truth first
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&g| !range.contains(gts[g].area()));
    let ignored: Vec<bool> = order.iter().map(|&g| !range.contains(gts[g].area())).collect();
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best = thr.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for (gi, &g) in order.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            if let Some(mi) = m {
                if !ignored[mi] && ignored[gi] {
                    break;
                }
            }
            let v = iou(d, gts[g], t);
            if v < best {
                continue;
            }
            best = v;
            m = Some(gi);
        }
        match m {
            Some(gi) => {
                taken[gi] = true;
                out.push((true, ignored[gi]));
            }
            None => out.push((false, !range.contains(det_area(d, t)))),
        }
    }
    ImageMatch {
        dets: out,
        num_gt: ignored.iter().filter(|&&i| !i).count(),
    }
}

/// 101-point interpolated AP from ranked (tp) flags; `None` without ground truth.
pub fn interpolated_ap(ranked_tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|r| {
            let thr = r as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&v| v < thr);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

/// AP for one IoU threshold and area range, averaged over classes with ground truth.
pub fn average_precision(dets: &[EvalDet<'_>], gts: &[EvalGt<'_>], t: IouType, thr: f64, range: AreaRange) -> Option<f64> {
    let mut ranked: Vec<&EvalDet<'_>> = dets.iter().collect();
    ranked.sort_by(|a, b| canonical_order(a, b));
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut images: Vec<u64> = gts.iter().map(|g| g.image_id).chain(dets.iter().map(|d| d.image_id)).collect();
    images.sort_unstable();
    images.dedup();
    let mut aps = Vec::new();
    for &c in &classes {
        // (det, matched, ignored) across images, re-ranked globally
        let mut all: Vec<(&EvalDet<'_>, bool, bool)> = Vec::new();
        let mut num_gt = 0;
        for &img in &images {
            let d: Vec<&EvalDet<'_>> = ranked
                .iter()
                .copied()
                .filter(|d| d.image_id == img && d.class_id == c)
                .take(MAX_DETS)
                .collect();
            let g: Vec<&EvalGt<'_>> = gts.iter().filter(|g| g.image_id == img && g.class_id == c).collect();
            let m = match_image(&d, &g, t, thr, range);
            num_gt += m.num_gt;
            all.extend(d.into_iter().zip(m.dets).map(|(d, (hit, ig))| (d, hit, ig)));
        }
        all.sort_by(|a, b| canonical_order(a.0, b.0));
        let flags: Vec<bool> = all.iter().filter(|x| !x.2).map(|x| x.1).collect();
        if let Some(ap) = interpolated_ap(&flags, num_gt) {
            aps.push(ap);
        }
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    /// Mean over IoU 0.50:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
}

fn mean_over_thresholds(dets: &[EvalDet<'_>], gts: &[EvalGt<'_>], t: IouType, range: AreaRange) -> f64 {
    let v: Vec<f64> = iou_thresholds()
        .iter()
        .filter_map(|&thr| average_precision(dets, gts, t, thr, range))
        .collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn evaluate_ap(dets: &[EvalDet<'_>], gts: &[EvalGt<'_>], t: IouType) -> ApSummary {
    let at = |thr: f64| average_precision(dets, gts, t, thr, AreaRange::All).unwrap_or(0.0);
    ApSummary {
        ap: mean_over_thresholds(dets, gts, t, AreaRange::All),
        ap50: at(0.5),
        ap75: at(0.75),
        ap_small: mean_over_thresholds(dets, gts, t, AreaRange::Small),
        ap_medium: mean_over_thresholds(dets, gts, t, AreaRange::Medium),
        ap_large: mean_over_thresholds(dets, gts, t, AreaRange::Large),
    }
}

/// Mean absolute difference of the four box edges.
pub fn boundary_error(pred: &BBox, gt: &BBox) -> f64 {
    ((pred.x - gt.x).abs() + (pred.right() - gt.right()).abs() + (pred.y - gt.y).abs() + (pred.bottom() - gt.bottom()).abs())
        / 4.0
}

/// Box of the direct baseline: the minimum enclosing rectangle of the binary mask.
pub fn direct_box(mask: &BinaryMask) -> Option<BBox> {
    min_enclosing_box(mask).ok()
}

/// The detection re-boxed by its mask; `None` when the mask is empty.
pub fn direct_baseline(mask: &BinaryMask, score: f64, class_id: usize) -> Option<DetectionResult> {
    let b = direct_box(mask)?;
    Some(DetectionResult {
        class_id,
        score,
        box_regressed: b,
        box_refined: b,
        mask: mask.clone(),
    })
}

/// Greedy same-class matching of one image's detections (by score) to
/// ground truth at IoU ≥ 0.5 on `key` boxes. Returns `(det, gt)` pairs.
pub fn match_detections(dets: &[(usize, f64, BBox)], gts: &[(usize, BBox)], min_iou: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| total_f64(dets[b].1, dets[a].1).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for d in order {
        let (class, _, bbox) = dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, &(gc, gb)) in gts.iter().enumerate() {
            if taken[g] || gc != class {
                continue;
            }
            let v = bbox.iou(&gb);
            if v >= min_iou && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            pairs.push((d, g));
        }
    }
    pairs
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStats {
    pub matched: usize,
    pub regressed: f64,
    pub refined: f64,
    pub direct: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub all: BoundaryStats,
    pub small: BoundaryStats,
    pub medium: BoundaryStats,
    pub large: BoundaryStats,
}

#[derive(Default)]
struct Acc {
    n: usize,
    sums: [f64; 3],
}

impl Acc {
    fn add(&mut self, e: [f64; 3]) {
        self.n += 1;
        for (s, v) in self.sums.iter_mut().zip(e) {
            *s += v;
        }
    }

    fn stats(&self) -> BoundaryStats {
        let m = |i: usize| if self.n == 0 { 0.0 } else { self.sums[i] / self.n as f64 };
        BoundaryStats {
            matched: self.n,
            regressed: m(0),
            refined: m(1),
            direct: m(2),
        }
    }
}

/// Boundary errors of the regressed, refined and direct boxes over detections
/// matched (by regressed box, IoU ≥ 0.5) to ground truth. Pairs whose mask is
/// empty have no direct box and are left out of every column.
pub fn boundary_report(images: &[(&[DetectionResult], &[Instance])]) -> BoundaryReport {
    let mut acc: [Acc; 4] = Default::default();
    for (dets, gts) in images {
        let keys: Vec<(usize, f64, BBox)> = dets.iter().map(|d| (d.class_id, d.score, d.box_regressed)).collect();
        let gkeys: Vec<(usize, BBox)> = gts.iter().map(|g| (g.class_id, g.bbox)).collect();
        for (d, g) in match_detections(&keys, &gkeys, 0.5) {
            let det = &dets[d];
            let gt = &gts[g];
            let Some(direct) = direct_box(&det.mask) else {
                continue;
            };
            let e = [
                boundary_error(&det.box_regressed, &gt.bbox),
                boundary_error(&det.box_refined, &gt.bbox),
                boundary_error(&direct, &gt.bbox),
            ];
            let area = gt.mask.count() as f64;
            acc[0].add(e);
            let idx = if AreaRange::Small.contains(area) {
                1
            } else if AreaRange::Medium.contains(area) {
                2
            } else {
                3
            };
            acc[idx].add(e);
        }
    }
    BoundaryReport {
        all: acc[0].stats(),
        small: acc[1].stats(),
        medium: acc[2].stats(),
        large: acc[3].stats(),
    }
}

/// Mean mask IoU of matched detections (matched by regressed box).
pub fn mean_mask_iou(images: &[(&[DetectionResult], &[Instance])]) -> (usize, f64) {
    let mut n = 0;
    let mut sum = 0.0;
    for (dets, gts) in images {
        let keys: Vec<(usize, f64, BBox)> = dets.iter().map(|d| (d.class_id, d.score, d.box_regressed)).collect();
        let gkeys: Vec<(usize, BBox)> = gts.iter().map(|g| (g.class_id, g.bbox)).collect();
        for (d, g) in match_detections(&keys, &gkeys, 0.5) {
            n += 1;
            sum += dets[d].mask.iou(&gts[g].mask);
        }
    }
    (n, if n == 0 { 0.0 } else { sum / n as f64 })
}
