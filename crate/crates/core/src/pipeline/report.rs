//! Results files and dataset-level evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{
    boundary_report, direct_baseline, evaluate_ap, mean_mask_iou, ApSummary, BoundaryReport, EvalDet, EvalGt, IouType,
};
use super::infer::DetectionResult;
use crate::datagen::{rle_decode, rle_encode, Instance, Rle};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const RESULTS_VERSION: u32 = 1;

/// One line of the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: u64,
    pub class_id: usize,
    pub score: f64,
    pub box_regressed: BBox,
    pub box_refined: BBox,
    pub mask_rle: Rle,
}

pub fn to_records(image_id: u64, dets: &[DetectionResult]) -> Vec<ResultRecord> {
    dets.iter()
        .map(|d| ResultRecord {
            image_id,
            class_id: d.class_id,
            score: d.score,
            box_regressed: d.box_regressed,
            box_refined: d.box_refined,
            mask_rle: rle_encode(&d.mask),
        })
        .collect()
}

pub fn from_record(r: &ResultRecord) -> Result<DetectionResult> {
    let [h, w] = r.mask_rle.size;
    Ok(DetectionResult {
        class_id: r.class_id,
        score: r.score,
        box_regressed: r.box_regressed,
        box_refined: r.box_refined,
        mask: rle_decode(&r.mask_rle, h, w)?,
    })
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let json = serde_json::to_string(records).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Which box of each detection is scored by the box metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    Regressed,
    Refined,
    /// Minimum enclosing rectangle of the mask; empty masks are dropped.
    Direct,
}

impl std::str::FromStr for BoxSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regressed" => Ok(BoxSource::Regressed),
            "refined" => Ok(BoxSource::Refined),
            "direct" => Ok(BoxSource::Direct),
            other => Err(Error::InvalidArgument(format!(
                "unknown box source `{other}` (expected regressed, refined or direct)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub boxes: BoxSource,
    pub images: usize,
    pub detections: usize,
    pub bbox: ApSummary,
    pub mask: ApSummary,
    pub boundary_error: BoundaryReport,
    pub matched: usize,
    pub mean_mask_iou: f64,
}

/// Evaluates per-image detections against ground truth; `images[i]` pairs
/// an image id with its detections and instances.
pub fn evaluate(images: &[(u64, &[DetectionResult], &[Instance])], boxes: BoxSource) -> EvalReport {
    let boxed: Vec<Vec<(&DetectionResult, BBox)>> = images
        .iter()
        .map(|(_, dets, _)| {
            dets.iter()
                .filter_map(|d| {
                    let b = match boxes {
                        BoxSource::Regressed => d.box_regressed,
                        BoxSource::Refined => d.box_refined,
                        BoxSource::Direct => direct_baseline(&d.mask, d.score, d.class_id)?.box_refined,
                    };
                    Some((d, b))
                })
                .collect()
        })
        .collect();
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for ((id, _, inst), b) in images.iter().zip(&boxed) {
        dets.extend(b.iter().map(|(d, bbox)| EvalDet {
            image_id: *id,
            class_id: d.class_id,
            score: d.score,
            bbox: *bbox,
            mask: &d.mask,
        }));
        gts.extend(inst.iter().map(|g| EvalGt {
            image_id: *id,
            class_id: g.class_id,
            bbox: g.bbox,
            mask: &g.mask,
        }));
    }
    // mask metrics always use every detection, whatever the box source
    let all_dets: Vec<EvalDet<'_>> = images
        .iter()
        .flat_map(|(id, d, _)| {
            d.iter().map(|d| EvalDet {
                image_id: *id,
                class_id: d.class_id,
                score: d.score,
                bbox: d.box_regressed,
                mask: &d.mask,
            })
        })
        .collect();
    let pairs: Vec<(&[DetectionResult], &[Instance])> = images.iter().map(|(_, d, g)| (*d, *g)).collect();
    let (matched, miou) = mean_mask_iou(&pairs);
    EvalReport {
        boxes,
        images: images.len(),
        detections: dets.len(),
        bbox: evaluate_ap(&dets, &gts, IouType::Box),
        mask: evaluate_ap(&all_dets, &gts, IouType::Mask),
        boundary_error: boundary_report(&pairs),
        matched,
        mean_mask_iou: miou,
    }
}

pub fn render_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "images {}  detections {}  boxes {:?}", r.images, r.detections, r.boxes);
    let _ = writeln!(s, "{:<6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "", "AP", "AP50", "AP75", "APs", "APm", "APl");
    for (name, a) in [("bbox", &r.bbox), ("mask", &r.mask)] {
        let _ = writeln!(
            s,
            "{name:<6} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            a.ap, a.ap50, a.ap75, a.ap_small, a.ap_medium, a.ap_large
        );
    }
    let _ = writeln!(s, "mask IoU (matched {}): {:.3}", r.matched, r.mean_mask_iou);
    let _ = writeln!(s, "boundary error  {:>8} {:>9} {:>8} {:>8}", "n", "regressed", "refined", "direct");
    let b = &r.boundary_error;
    for (name, st) in [("all", b.all), ("small", b.small), ("medium", b.medium), ("large", b.large)] {
        let _ = writeln!(
            s,
            "  {name:<13} {:>8} {:>9.3} {:>8.3} {:>8.3}",
            st.matched, st.regressed, st.refined, st.direct
        );
    }
    s
}
