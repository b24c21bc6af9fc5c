pub mod eval;
pub mod infer;
pub mod report;
pub mod train;

use rayon::prelude::*;

pub use eval::{
    boundary_error, direct_baseline, direct_box, evaluate_ap, ApSummary, BoundaryReport, BoundaryStats, EvalDet,
    EvalGt, IouType,
};
pub use infer::{infer, infer_detailed, Detection, DetectionResult, InferConfig};
pub use report::{evaluate, render_table, BoxSource, EvalReport, ResultRecord, RESULTS_VERSION};
pub use train::{batch_plan, image_loss, image_tensor, train, train_step, LossBreakdown, TrainConfig};

use crate::datagen::SceneSample;
use crate::error::Result;
use crate::geometry::BBox;
use crate::mbrm::{MbrmParams, MbrmSample};
use crate::model::Network;
use crate::numerics::ParamStore;

/// Inference over many images in parallel; output order follows `samples`.
pub fn infer_all(
    net: &Network,
    store: &ParamStore,
    samples: &[SceneSample],
    mbrm: &MbrmParams,
    cfg: &InferConfig,
) -> Result<Vec<Vec<DetectionResult>>> {
    samples
        .par_iter()
        .map(|s| infer(net, store, &s.image, s.width, s.height, mbrm, cfg))
        .collect()
}

/// MBRM training data from the frozen model's own outputs: every detection
/// matched to ground truth (IoU ≥ 0.5 on the regressed box) contributes its
/// soft mask, gt box and regressed box.
pub fn collect_mbrm_samples(
    net: &Network,
    store: &ParamStore,
    samples: &[SceneSample],
    cfg: &InferConfig,
) -> Result<Vec<MbrmSample>> {
    let bypass = MbrmParams::zeros(1, 0.0);
    let per_image: Vec<Vec<MbrmSample>> = samples
        .par_iter()
        .map(|s| {
            let dets = infer_detailed(net, store, &s.image, s.width, s.height, &bypass, cfg)?;
            let keys: Vec<(usize, f64, BBox)> = dets
                .iter()
                .map(|d| (d.result.class_id, d.result.score, d.result.box_regressed))
                .collect();
            let gts: Vec<(usize, BBox)> = s.instances.iter().map(|g| (g.class_id, g.bbox)).collect();
            eval::match_detections(&keys, &gts, 0.5)
                .into_iter()
                .map(|(d, g)| {
                    MbrmSample::from_mask(
                        &dets[d].soft_mask,
                        s.width,
                        s.height,
                        gts[g].1,
                        dets[d].result.box_regressed,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}
