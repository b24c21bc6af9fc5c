//! Object-assisted instance masks: correlation of pixel representations with
//! an object's fg/bg representation, expanded-box cropping, and the
//! OHEM-balanced mask loss.

use serde::{Deserialize, Serialize};

use crate::datagen::BinaryMask;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::numerics::{pixel_ce_term, pixel_cross_entropy, softmax_channels, Real, Tensor};

/// Expansion applied to ground-truth boxes when cropping during training.
pub const TRAIN_EXPAND_RATIO: f64 = 1.5;
/// Expansion applied to predicted boxes at inference.
pub const INFER_EXPAND_RATIO: f64 = 1.2;

fn check_correlate<T: Real>(pixel_repr: &Tensor<T>, object: &Tensor<T>) -> Result<(usize, usize)> {
    let (d, h, w) = pixel_repr.chw("correlate")?;
    if object.shape() != [2, d] {
        return Err(Error::shape(
            "correlate",
            format!(
                "object representation {:?} does not match pixel dimension {d}",
                object.shape()
            ),
        ));
    }
    Ok((d, h * w))
}

/// Two logit maps: each row of `object` applied as a 1×1 filter over `pixel_repr`.
pub fn correlate_logits<T: Real>(pixel_repr: &Tensor<T>, object: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, n) = check_correlate(pixel_repr, object)?;
    let (_, h, w) = pixel_repr.chw("correlate")?;
    let mut out = vec![T::zero(); 2 * n];
    T::gemm(2, d, n, object.data(), false, pixel_repr.data(), false, &mut out, false);
    Tensor::new(vec![2, h, w], out)
}

/// `softmax(Ψ(U) ⋆ φ(v_o))`: per-pixel (fg, bg) probabilities for one object.
pub fn correlate<T: Real>(pixel_repr: &Tensor<T>, object: &Tensor<T>) -> Result<Tensor<T>> {
    softmax_channels(&correlate_logits(pixel_repr, object)?)
}

/// Backward of [`correlate_logits`]: returns `(d pixel_repr, d object)`.
pub fn correlate_logits_backward<T: Real>(
    pixel_repr: &Tensor<T>,
    object: &Tensor<T>,
    grad_logits: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d, n) = check_correlate(pixel_repr, object)?;
    if grad_logits.len() != 2 * n {
        return Err(Error::shape(
            "correlate_backward",
            format!("gradient {:?} for {n} pixels", grad_logits.shape()),
        ));
    }
    let mut d_obj = vec![T::zero(); 2 * d];
    T::gemm(2, n, d, grad_logits.data(), false, pixel_repr.data(), true, &mut d_obj, false);
    let mut d_pix = vec![T::zero(); d * n];
    T::gemm(d, 2, n, object.data(), true, grad_logits.data(), false, &mut d_pix, false);
    Ok((
        Tensor::new(pixel_repr.shape().to_vec(), d_pix)?,
        Tensor::new(vec![2, d], d_obj)?,
    ))
}

/// An expanded box clipped to a map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRegion {
    pub bbox: BBox,
    pub ratio: f64,
}

/// Center-retaining scaling of `bbox` by `ratio`, without clipping.
pub fn expand_unclipped(bbox: &BBox, ratio: f64) -> BBox {
    let (cx, cy) = bbox.center();
    let (w, h) = (bbox.w * ratio, bbox.h * ratio);
    if w <= 0.0 || h <= 0.0 {
        return BBox::new(cx - 0.5, cy - 0.5, 1.0, 1.0);
    }
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
}

/// Expands `bbox` by `ratio` about its center and clips it to `[0,W)×[0,H)`.
///
/// A zero-size box becomes a 1×1 region at its center.
pub fn expand_box(bbox: &BBox, ratio: f64, bounds: (f64, f64)) -> Result<CropRegion> {
    if !(ratio >= 1.0) || !bbox.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "expand_box needs ratio ≥ 1 and a finite box, got {ratio} / {bbox:?}"
        )));
    }
    Ok(CropRegion {
        bbox: expand_unclipped(bbox, ratio).clip(bounds.0, bounds.1),
        ratio,
    })
}

/// How one pixel participates in an object's mask loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelRole {
    /// Outside the expanded gt box; weight 0.
    Outside,
    Foreground,
    /// Background selected by hard example mining; weight 1.
    HardBackground,
    /// Background inside the region but not selected; weight 0.
    EasyBackground,
}

impl PixelRole {
    pub fn weight<T: Real>(self) -> T {
        match self {
            PixelRole::Foreground | PixelRole::HardBackground => T::one(),
            PixelRole::Outside | PixelRole::EasyBackground => T::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskLossConfig {
    pub expand_ratio: f64,
    /// Selected background pixels per foreground pixel.
    pub bg_per_fg: f64,
    /// When false the whole map is eligible (no training-time cropping).
    pub crop: bool,
}

impl Default for MaskLossConfig {
    fn default() -> Self {
        MaskLossConfig {
            expand_ratio: TRAIN_EXPAND_RATIO,
            bg_per_fg: 1.0,
            crop: true,
        }
    }
}

/// Assigns a [`PixelRole`] to every pixel of one object's similarity map.
///
/// `gt_box` is in the similarity-map frame. Background pixels are ranked by
/// their cross entropy (ties by pixel index) and the hardest
/// `round(bg_per_fg · n_fg)` are kept.
pub fn pixel_roles<T: Real>(fg_prob: &[T], gt_mask: &BinaryMask, gt_box: &BBox, cfg: &MaskLossConfig) -> Result<Vec<PixelRole>> {
    let (w, h) = (gt_mask.width, gt_mask.height);
    if fg_prob.len() != w * h {
        return Err(Error::shape(
            "mask_training_loss",
            format!("{} probabilities for a {w}×{h} mask", fg_prob.len()),
        ));
    }
    let region = if cfg.crop {
        Some(expand_box(gt_box, cfg.expand_ratio, (w as f64, h as f64))?.bbox)
    } else {
        None
    };
    let mut roles = vec![PixelRole::Outside; w * h];
    let mut bg = Vec::new();
    let mut n_fg = 0usize;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if region.is_some_and(|b| !b.contains_pixel(c, r)) {
                continue;
            }
            if gt_mask.data[i] != 0 {
                roles[i] = PixelRole::Foreground;
                n_fg += 1;
            } else {
                roles[i] = PixelRole::EasyBackground;
                bg.push(i);
            }
        }
    }
    let take = ((cfg.bg_per_fg * n_fg as f64).round() as usize).min(bg.len());
    let ce: Vec<T> = bg.iter().map(|&i| pixel_ce_term(fg_prob[i], T::zero())).collect();
    let mut order: Vec<usize> = (0..bg.len()).collect();
    order.sort_by(|&a, &b| ce[b].as_f64().total_cmp(&ce[a].as_f64()).then(bg[a].cmp(&bg[b])));
    for &o in &order[..take] {
        roles[bg[o]] = PixelRole::HardBackground;
    }
    Ok(roles)
}

/// One supervised object: its similarity map and matched ground truth at map resolution.
#[derive(Clone, Copy, Debug)]
pub struct MaskObject<'a, T = f32> {
    /// `2×h×w` probabilities from [`correlate`].
    pub probs: &'a Tensor<T>,
    pub gt_mask: &'a BinaryMask,
    /// Ground-truth box in the similarity-map frame.
    pub gt_box: BBox,
}

#[derive(Clone, Debug)]
pub struct MaskLoss<T = f32> {
    pub loss: T,
    /// Gradient w.r.t. each object's `2×h×w` correlation logits; `None` when skipped.
    pub logit_grads: Vec<Option<Tensor<T>>>,
    /// Objects without foreground pixels at map resolution.
    pub skipped: usize,
    /// Per supervised object: (foreground, selected background) pixel counts.
    pub counts: Vec<(usize, usize)>,
}

/// Mean over objects of the OHEM-weighted pixel cross entropy.
///
/// Gradients are taken with respect to the correlation logits, where the
/// softmax–cross-entropy composite has the closed form `p − t`.
pub fn mask_training_loss<T: Real>(objects: &[MaskObject<'_, T>], cfg: &MaskLossConfig) -> Result<MaskLoss<T>> {
    let mut per_object = Vec::with_capacity(objects.len());
    let mut skipped = 0;
    let mut counts = Vec::new();
    for obj in objects {
        let (c, h, w) = obj.probs.chw("mask_training_loss")?;
        if c != 2 || (w, h) != (obj.gt_mask.width, obj.gt_mask.height) {
            return Err(Error::shape(
                "mask_training_loss",
                format!("map {:?} vs mask {}×{}", obj.probs.shape(), obj.gt_mask.width, obj.gt_mask.height),
            ));
        }
        let fg = obj.probs.channel(0);
        let roles = pixel_roles(fg, obj.gt_mask, &obj.gt_box, cfg)?;
        let n_fg = roles.iter().filter(|&&r| r == PixelRole::Foreground).count();
        if n_fg == 0 {
            skipped += 1;
            per_object.push(None);
            continue;
        }
        let n_bg = roles.iter().filter(|&&r| r == PixelRole::HardBackground).count();
        counts.push((n_fg, n_bg));
        let weight: Vec<T> = roles.iter().map(|r| r.weight()).collect();
        let target: Vec<T> = obj.gt_mask.data.iter().map(|&v| T::of_f64(v as f64)).collect();
        let ce = pixel_cross_entropy(fg, &target, &weight)?;
        let n = h * w;
        let mut g = vec![T::zero(); 2 * n];
        for i in 0..n {
            if weight[i] > T::zero() {
                let v = weight[i] * (fg[i] - target[i]) / ce.total_weight;
                g[i] = v;
                g[n + i] = -v;
            }
        }
        per_object.push(Some((ce.loss, Tensor::new(vec![2, h, w], g)?)));
    }
    let active = per_object.iter().filter(|o| o.is_some()).count();
    let scale = if active > 0 { T::one() / T::of_f64(active as f64) } else { T::zero() };
    let mut loss = T::zero();
    let logit_grads = per_object
        .into_iter()
        .map(|o| {
            o.map(|(l, mut g)| {
                loss = loss + l;
                g.scale(scale);
                g
            })
        })
        .collect();
    Ok(MaskLoss {
        loss: loss * scale,
        logit_grads,
        skipped,
        counts,
    })
}

/// Foreground channel with everything outside the expanded box set to zero.
#[derive(Clone, Debug)]
pub struct CroppedMask {
    /// `1×h×w`.
    pub fg: Tensor,
    pub region: CropRegion,
    /// Set when the expanded box does not overlap the map at all.
    pub outside_map: bool,
}

/// Crops the fg channel of `probs` with `bbox` (image pixels) expanded by `ratio`.
pub fn crop_inference_mask(probs: &Tensor, bbox: &BBox, ratio: f64, stride: usize) -> Result<CroppedMask> {
    let (c, h, w) = probs.chw("crop_inference_mask")?;
    if c != 2 {
        return Err(Error::shape("crop_inference_mask", format!("expected 2 channels, got {c}")));
    }
    let in_map = bbox.scaled(1.0 / stride as f64);
    let region = expand_box(&in_map, ratio, (w as f64, h as f64))?;
    let fg = probs.channel(0);
    let mut out = vec![0.0f32; h * w];
    let mut any = false;
    if let (Some((c0, c1)), Some((r0, r1))) = (region.bbox.pixel_cols(w), region.bbox.pixel_rows(h)) {
        for r in r0..=r1 {
            for c in c0..=c1 {
                out[r * w + c] = fg[r * w + c];
                any = true;
            }
        }
    }
    Ok(CroppedMask {
        fg: Tensor::new(vec![1, h, w], out)?,
        region,
        outside_map: !any,
    })
}
