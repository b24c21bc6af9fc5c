//! Anchor tiling, center/size offset coding and IoU-based assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Size offsets are clamped to this value before exponentiation.
pub const MAX_SIZE_OFFSET: f64 = 4.0;
pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub stride: usize,
    pub scales: Vec<f64>,
    /// Height / width.
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            stride: 8,
            scales: vec![24.0, 48.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    /// Anchors per grid location.
    pub fn per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// Anchor layout over one feature level.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub config: AnchorConfig,
    pub grid_w: usize,
    pub grid_h: usize,
}

/// Position of one anchor in the head outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorLocation {
    pub gx: usize,
    pub gy: usize,
    pub slot: usize,
}

impl AnchorGrid {
    pub fn new(config: AnchorConfig, image_w: usize, image_h: usize) -> Result<Self> {
        if config.per_location() == 0 || config.stride == 0 {
            return Err(Error::InvalidArgument("anchor grid needs k ≥ 1 and stride ≥ 1".into()));
        }
        Ok(AnchorGrid {
            grid_w: image_w.div_ceil(config.stride),
            grid_h: image_h.div_ceil(config.stride),
            config,
        })
    }

    pub fn k(&self) -> usize {
        self.config.per_location()
    }

    pub fn len(&self) -> usize {
        self.grid_w * self.grid_h * self.k()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Anchor index `((gy · W + gx) · k + slot)`.
    pub fn index(&self, loc: AnchorLocation) -> usize {
        (loc.gy * self.grid_w + loc.gx) * self.k() + loc.slot
    }

    pub fn location(&self, index: usize) -> AnchorLocation {
        let k = self.k();
        let cell = index / k;
        AnchorLocation {
            gx: cell % self.grid_w,
            gy: cell / self.grid_w,
            slot: index % k,
        }
    }

    /// Anchor boxes in image pixels, ordered by anchor index. Not clipped.
    pub fn boxes(&self) -> Vec<BBox> {
        let stride = self.config.stride as f64;
        let mut out = Vec::with_capacity(self.len());
        for gy in 0..self.grid_h {
            for gx in 0..self.grid_w {
                let (cx, cy) = ((gx as f64 + 0.5) * stride, (gy as f64 + 0.5) * stride);
                for &scale in &self.config.scales {
                    for &ratio in &self.config.ratios {
                        let w = scale / ratio.sqrt();
                        let h = scale * ratio.sqrt();
                        out.push(BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h));
                    }
                }
            }
        }
        out
    }
}

/// Anchors for an image; shorthand for `AnchorGrid::new(..)?.boxes()`.
pub fn generate_anchors(config: &AnchorConfig, image_w: usize, image_h: usize) -> Result<Vec<BBox>> {
    Ok(AnchorGrid::new(config.clone(), image_w, image_h)?.boxes())
}

/// `(dx, dy, dw, dh)` taking `anchor` to `target`.
pub fn encode_box(anchor: &BBox, target: &BBox) -> [f64; 4] {
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    [
        (tcx - acx) / anchor.w,
        (tcy - acy) / anchor.h,
        (target.w / anchor.w).ln(),
        (target.h / anchor.h).ln(),
    ]
}

pub fn decode_box(anchor: &BBox, offsets: [f64; 4]) -> BBox {
    let (acx, acy) = anchor.center();
    let cx = acx + offsets[0] * anchor.w;
    let cy = acy + offsets[1] * anchor.h;
    let w = anchor.w * offsets[2].min(MAX_SIZE_OFFSET).exp();
    let h = anchor.h * offsets[3].min(MAX_SIZE_OFFSET).exp();
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorMatch {
    Positive { gt: usize },
    Negative,
    Ignore,
}

/// Assigns each anchor by IoU against `gt_boxes` (anchors clipped to the image).
///
/// IoU ≥ 0.5 is positive, < 0.4 negative, otherwise ignored. Each gt also
/// claims its highest-IoU anchor so no gt is left without a positive.
pub fn match_anchors(anchors: &[BBox], gt_boxes: &[BBox], image_w: usize, image_h: usize) -> Vec<AnchorMatch> {
    if gt_boxes.is_empty() {
        return vec![AnchorMatch::Negative; anchors.len()];
    }
    let clipped: Vec<BBox> = anchors
        .iter()
        .map(|a| a.clip(image_w as f64, image_h as f64))
        .collect();
    let ious: Vec<Vec<f64>> = clipped
        .iter()
        .map(|a| gt_boxes.iter().map(|g| a.iou(g)).collect())
        .collect();
    let mut labels: Vec<AnchorMatch> = ious
        .iter()
        .map(|row| {
            let (best_gt, best) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (g, &v)| if v > acc.1 { (g, v) } else { acc });
            if best >= POSITIVE_IOU {
                AnchorMatch::Positive { gt: best_gt }
            } else if best < NEGATIVE_IOU {
                AnchorMatch::Negative
            } else {
                AnchorMatch::Ignore
            }
        })
        .collect();
    let mut claimed = vec![false; anchors.len()];
    for g in 0..gt_boxes.len() {
        let best = (0..anchors.len())
            .filter(|&a| !claimed[a])
            .fold(None, |acc: Option<(usize, f64)>, a| match acc {
                Some((_, v)) if ious[a][g] <= v => acc,
                _ => Some((a, ious[a][g])),
            });
        if let Some((a, _)) = best {
            claimed[a] = true;
            labels[a] = AnchorMatch::Positive { gt: g };
        }
    }
    labels
}
