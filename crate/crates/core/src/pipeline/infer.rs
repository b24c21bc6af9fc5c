use serde::{Deserialize, Serialize};

use super::train::image_tensor;
use crate::corr_crop::{correlate, crop_inference_mask, INFER_EXPAND_RATIO};
use crate::datagen::BinaryMask;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mbrm::{refine_box, MbrmParams, Refinement};
use crate::model::{decode_box, extract_object_repr, nms, Candidate, ModelConfig, Network, DEFAULT_NMS_IOU};
use crate::numerics::{bilinear_upsample, sigmoid, ParamStore};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MASK_THRESHOLD: f32 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub expand_ratio: f64,
    pub mask_threshold: f32,
    pub max_detections: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            expand_ratio: INFER_EXPAND_RATIO,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            max_detections: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub class_id: usize,
    pub score: f64,
    pub box_regressed: BBox,
    pub box_refined: BBox,
    /// Image-resolution binary mask.
    pub mask: BinaryMask,
}

/// A detection plus the intermediate soft mask and refinement details.
#[derive(Clone, Debug)]
pub struct Detection {
    pub result: DetectionResult,
    /// Cropped foreground probabilities upsampled to `H×W`.
    pub soft_mask: Vec<f32>,
    pub refinement: Refinement,
    pub anchor_index: usize,
    /// The expanded box missed the similarity map entirely.
    pub crop_outside: bool,
}

/// Scored, decoded, clipped boxes for every anchor above the threshold
/// (best class per anchor, lowest class on ties).
fn candidates(net: &Network, cls: &[f32], reg: &[f32], w: usize, h: usize, threshold: f64) -> Result<Vec<Candidate>> {
    let grid = net.anchor_grid(w, h)?;
    let anchors = grid.boxes();
    let c = net.config().num_classes;
    let plane = grid.grid_w * grid.grid_h;
    let mut out = Vec::new();
    for (a, anchor) in anchors.iter().enumerate() {
        let loc = grid.location(a);
        let cell = loc.gy * grid.grid_w + loc.gx;
        let (mut best_c, mut best) = (0, f32::NEG_INFINITY);
        for cl in 0..c {
            let v = cls[(loc.slot * c + cl) * plane + cell];
            if v > best {
                (best_c, best) = (cl, v);
            }
        }
        let score = sigmoid(best as f64);
        if score < threshold {
            continue;
        }
        let off: [f64; 4] = std::array::from_fn(|j| reg[(loc.slot * 4 + j) * plane + cell] as f64);
        let bbox = decode_box(anchor, off).clip(w as f64, h as f64);
        if bbox.w <= 0.0 || bbox.h <= 0.0 || !bbox.is_finite() {
            continue;
        }
        out.push(Candidate {
            bbox,
            score,
            class_id: best_c,
            anchor_index: a,
        });
    }
    Ok(out)
}

/// Full inference with intermediates. `image` is interleaved `H×W×3` in `[0,1]`.
///
/// Order: score threshold → NMS → object representation → correlation →
/// expanded crop → upsample → boundary refinement → binarization.
pub fn infer_detailed(
    net: &Network,
    store: &ParamStore,
    image: &[f32],
    width: usize,
    height: usize,
    mbrm: &MbrmParams,
    cfg: &InferConfig,
) -> Result<Vec<Detection>> {
    if !(cfg.expand_ratio >= 1.0) || !(0.0..=1.0).contains(&cfg.score_threshold) {
        return Err(Error::Config(format!("invalid inference thresholds {cfg:?}")));
    }
    let x = image_tensor(width, height, image)?;
    let (s4, s8) = net.backbone_forward(store, &x)?;
    let heads = net.object_stream_forward(store, &s8)?;
    let mut kept = nms(
        &candidates(net, heads.cls.data(), heads.reg.data(), width, height, cfg.score_threshold)?,
        cfg.nms_iou,
    );
    kept.truncate(cfg.max_detections);
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    let pixel = net.pixel_stream_forward(store, &s4)?;
    let grid = net.anchor_grid(width, height)?;
    kept.iter()
        .map(|cand| {
            let repr = extract_object_repr(&heads.repr, grid.location(cand.anchor_index), grid.k())?;
            let probs = correlate(&pixel, &repr.0)?;
            let crop = crop_inference_mask(&probs, &cand.bbox, cfg.expand_ratio, ModelConfig::PIXEL_STRIDE)?;
            if crop.outside_map {
                log::warn!("expanded box {:?} lies outside the similarity map", cand.bbox);
            }
            let soft = bilinear_upsample(&crop.fg, height, width)?.into_data();
            let refinement = refine_box(&cand.bbox, &soft, width, height, mbrm)?;
            let mask = BinaryMask::from_soft(width, height, &soft, cfg.mask_threshold);
            Ok(Detection {
                result: DetectionResult {
                    class_id: cand.class_id,
                    score: cand.score,
                    box_regressed: cand.bbox,
                    box_refined: refinement.bbox,
                    mask,
                },
                soft_mask: soft,
                refinement,
                anchor_index: cand.anchor_index,
                crop_outside: crop.outside_map,
            })
        })
        .collect()
}

pub fn infer(
    net: &Network,
    store: &ParamStore,
    image: &[f32],
    width: usize,
    height: usize,
    mbrm: &MbrmParams,
    cfg: &InferConfig,
) -> Result<Vec<DetectionResult>> {
    Ok(infer_detailed(net, store, image, width, height, mbrm, cfg)?
        .into_iter()
        .map(|d| d.result)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scenes, SceneConfig};

    fn setup() -> (Network, ParamStore, Vec<f32>) {
        let cfg = ModelConfig {
            backbone_width: 8,
            head_width: 8,
            pixel_hidden: 8,
            repr_dim: 4,
            ..Default::default()
        };
        let mut store = ParamStore::new();
        let net = Network::new(cfg, &mut store, 2).unwrap();
        let scene = SceneConfig {
            image_size: 64,
            ..Default::default()
        };
        let s = generate_scenes(3, 1, &scene).unwrap().remove(0);
        (net, store, s.image)
    }

    fn open_config() -> InferConfig {
        InferConfig {
            score_threshold: 0.0,
            max_detections: 7,
            ..Default::default()
        }
    }

    #[test]
    fn ordered_capped_and_bypassed() {
        let (net, store, img) = setup();
        let dets = infer_detailed(&net, &store, &img, 64, 64, &MbrmParams::zeros(2, 0.0), &open_config()).unwrap();
        assert_eq!(dets.len(), 7);
        for w in dets.windows(2) {
            assert!(w[0].result.score >= w[1].result.score);
        }
        for d in &dets {
            assert_eq!(d.result.box_refined, d.result.box_regressed);
            assert_eq!((d.result.mask.width, d.result.mask.height), (64, 64));
            assert_eq!(d.soft_mask.len(), 64 * 64);
        }
    }

    #[test]
    fn masks_stay_near_the_expanded_box() {
        let (net, store, img) = setup();
        let cfg = open_config();
        let stride = ModelConfig::PIXEL_STRIDE as f64;
        for d in infer_detailed(&net, &store, &img, 64, 64, &MbrmParams::zeros(2, 0.0), &cfg).unwrap() {
            let b = d.result.box_regressed;
            let (cx, cy) = b.center();
            let (hw, hh) = (b.w * cfg.expand_ratio / 2.0 + stride, b.h * cfg.expand_ratio / 2.0 + stride);
            for (i, &v) in d.soft_mask.iter().enumerate() {
                let (x, y) = ((i % 64) as f64 + 0.5, (i / 64) as f64 + 0.5);
                if (x - cx).abs() > hw || (y - cy).abs() > hh {
                    assert_eq!(v, 0.0, "pixel ({x}, {y}) outside {b:?}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_thresholds() {
        let (net, store, img) = setup();
        let bypass = MbrmParams::zeros(2, 0.0);
        let bad = InferConfig {
            expand_ratio: 0.9,
            ..Default::default()
        };
        assert!(infer(&net, &store, &img, 64, 64, &bypass, &bad).is_err());
        let bad = InferConfig {
            score_threshold: 1.5,
            ..Default::default()
        };
        assert!(infer(&net, &store, &img, 64, 64, &bypass, &bad).is_err());
    }
}
