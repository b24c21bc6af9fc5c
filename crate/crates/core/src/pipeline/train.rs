//! Phase-one training: focal classification, smooth-L1 regression on positive
//! anchors, and the correlation mask loss on those same positives.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr_crop::{correlate, correlate_logits_backward, mask_training_loss, MaskLossConfig, MaskObject};
use crate::datagen::{scene_seed, BinaryMask, SceneSample};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::{
    encode_box, extract_object_repr, match_anchors, scatter_object_repr_grad, AnchorMatch, ModelConfig,
    Network, OutputGrads,
};
use crate::numerics::{focal_loss, smooth_l1, FocalTarget, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    /// Linear warm-up length in iterations.
    pub warmup: u64,
    /// Iterations at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<u64>,
    pub lr_decay: f32,
    pub lambda_reg: f32,
    pub lambda_mask: f32,
    pub focal_alpha: f32,
    pub focal_gamma: f32,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f32,
    pub flip: bool,
    pub seed: u64,
    pub mask: MaskLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 5,
            lr: 0.02,
            momentum: 0.9,
            warmup: 100,
            lr_milestones: vec![1500, 1800],
            lr_decay: 0.1,
            lambda_reg: 1.0,
            lambda_mask: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            grad_clip: 1.0,
            flip: true,
            seed: 0,
            mask: MaskLossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_mask >= 0.0) {
            return Err(Error::Config("loss weights must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.grad_clip >= 0.0) {
            return Err(Error::Config("momentum must be in [0,1) and grad_clip ≥ 0".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f32 {
        let warm = if self.warmup > 0 {
            ((iteration + 1) as f32 / self.warmup as f32).min(1.0)
        } else {
            1.0
        };
        let decays = self.lr_milestones.iter().filter(|&&m| iteration >= m).count();
        self.lr * warm * self.lr_decay.powi(decays as i32)
    }
}

/// Loss terms of one step (batch means).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub mask: f64,
    pub positives: usize,
    pub skipped_masks: usize,
}

/// Network input for an interleaved `H×W×3` image in `[0,1]`: planar and centred.
pub fn image_tensor(width: usize, height: usize, hwc: &[f32]) -> Result<Tensor> {
    if hwc.len() != width * height * 3 {
        return Err(Error::shape(
            "image_tensor",
            format!("{} values for a {width}×{height} RGB image", hwc.len()),
        ));
    }
    let n = width * height;
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            out[c * n + i] = hwc[3 * i + c] - 0.5;
        }
    }
    Tensor::new(vec![3, height, width], out)
}

fn check_finite(term: &'static str, v: f32) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss(term))
    }
}

/// Losses and parameter gradients (indexed like `store`) for one image.
pub fn image_loss(
    net: &Network,
    store: &ParamStore,
    sample: &SceneSample,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let (w, h) = (sample.width, sample.height);
    let grid = net.anchor_grid(w, h)?;
    let anchors = grid.boxes();
    let pass = net.forward(store, image_tensor(w, h, &sample.image)?)?;
    let c = net.config().num_classes;
    let k = grid.k();
    let plane = grid.grid_w * grid.grid_h;
    let gt_boxes: Vec<BBox> = sample.instances.iter().map(|i| i.bbox).collect();
    let matches = match_anchors(&anchors, &gt_boxes, w, h);

    let mut targets = Vec::with_capacity(anchors.len());
    let mut positives = Vec::new();
    for (a, m) in matches.iter().enumerate() {
        targets.push(match *m {
            AnchorMatch::Positive { gt } => {
                positives.push((a, gt));
                let cls = sample.instances[gt].class_id;
                if cls >= c {
                    return Err(Error::InvalidArgument(format!("class id {cls} ≥ num_classes {c}")));
                }
                FocalTarget::Positive(cls)
            }
            AnchorMatch::Negative => FocalTarget::Negative,
            AnchorMatch::Ignore => FocalTarget::Ignore,
        });
    }

    // classification: channel (slot·c + class) ↔ anchor-major (anchor·c + class)
    let cls_map = pass.cls_map().data();
    let mut logits = vec![0.0f32; anchors.len() * c];
    for (a, row) in logits.chunks_exact_mut(c).enumerate() {
        let loc = grid.location(a);
        let cell = loc.gy * grid.grid_w + loc.gx;
        for (cl, v) in row.iter_mut().enumerate() {
            *v = cls_map[(loc.slot * c + cl) * plane + cell];
        }
    }
    let (cls_loss, cls_grad) = focal_loss(&logits, &targets, c, cfg.focal_alpha, cfg.focal_gamma)?;
    check_finite("cls", cls_loss)?;
    let mut d_cls = Tensor::zeros(pass.cls_map().shape());
    for (a, row) in cls_grad.chunks_exact(c).enumerate() {
        let loc = grid.location(a);
        let cell = loc.gy * grid.grid_w + loc.gx;
        for (cl, &g) in row.iter().enumerate() {
            d_cls.data_mut()[(loc.slot * c + cl) * plane + cell] = g;
        }
    }

    // regression on positives
    let norm = positives.len().max(1) as f32;
    let reg_map = pass.reg_map().data();
    let mut d_reg = Tensor::zeros(pass.reg_map().shape());
    let mut reg_loss = 0.0f32;
    for &(a, g) in &positives {
        let loc = grid.location(a);
        let cell = loc.gy * grid.grid_w + loc.gx;
        let idx: [usize; 4] = std::array::from_fn(|j| (loc.slot * 4 + j) * plane + cell);
        let pred = idx.map(|i| reg_map[i]);
        let target = encode_box(&anchors[a], &gt_boxes[g]).map(|v| v as f32);
        let (v, gr) = smooth_l1(&pred, &target);
        reg_loss += v;
        for (i, gv) in idx.iter().zip(gr) {
            d_reg.data_mut()[*i] = cfg.lambda_reg * gv / norm;
        }
    }
    reg_loss /= norm;
    check_finite("reg", reg_loss)?;

    // masks on positives
    let stride = ModelConfig::PIXEL_STRIDE;
    let pixel = pass.pixel_repr();
    let mut small: Vec<Option<BinaryMask>> = vec![None; gt_boxes.len()];
    let mut reprs = Vec::with_capacity(positives.len());
    let mut probs = Vec::with_capacity(positives.len());
    for &(a, g) in &positives {
        let r = extract_object_repr(pass.repr_map(), grid.location(a), k)?;
        probs.push(correlate(pixel, &r.0)?);
        reprs.push(r);
        if small[g].is_none() {
            small[g] = Some(sample.instances[g].mask.downsample_area(stride));
        }
    }
    let objects: Vec<MaskObject<'_>> = positives
        .iter()
        .zip(&probs)
        .map(|(&(_, g), p)| MaskObject {
            probs: p,
            gt_mask: small[g].as_ref().expect("filled above"),
            gt_box: gt_boxes[g].scaled(1.0 / stride as f64),
        })
        .collect();
    let ml = mask_training_loss(&objects, &cfg.mask)?;
    check_finite("mask", ml.loss)?;
    let mut d_pixel = Tensor::zeros(pixel.shape());
    let mut d_repr = Tensor::zeros(pass.repr_map().shape());
    for ((lg, r), &(a, _)) in ml.logit_grads.iter().zip(&reprs).zip(&positives) {
        if let Some(lg) = lg {
            let (mut dp, mut dobj) = correlate_logits_backward(pixel, &r.0, lg)?;
            dp.scale(cfg.lambda_mask);
            dobj.scale(cfg.lambda_mask);
            d_pixel.add_assign(&dp)?;
            scatter_object_repr_grad(&mut d_repr, grid.location(a), k, &dobj)?;
        }
    }

    let total = cls_loss + cfg.lambda_reg * reg_loss + cfg.lambda_mask * ml.loss;
    check_finite("total", total)?;
    let grads = net.backward(
        store,
        &pass,
        OutputGrads {
            cls: Some(d_cls),
            reg: Some(d_reg),
            repr: Some(d_repr),
            pixel: Some(d_pixel),
        },
    )?;
    Ok((
        LossBreakdown {
            total: total as f64,
            cls: cls_loss as f64,
            reg: reg_loss as f64,
            mask: ml.loss as f64,
            positives: positives.len(),
            skipped_masks: ml.skipped,
        },
        grads,
    ))
}

/// One SGD step on the mean loss of `batch`. Images are processed in parallel
/// and their gradients summed in batch order, so the result is deterministic.
pub fn train_step(
    net: &Network,
    store: &mut ParamStore,
    batch: &[SceneSample],
    cfg: &TrainConfig,
    lr: f32,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_image: Vec<(LossBreakdown, Vec<Tensor>)> = {
        let frozen: &ParamStore = store;
        batch
            .par_iter()
            .map(|s| image_loss(net, frozen, s, cfg))
            .collect::<Result<_>>()?
    };
    let inv = 1.0 / batch.len() as f32;
    let mut out = LossBreakdown::default();
    store.zero_grads();
    for (lb, grads) in &per_image {
        out.total += lb.total;
        out.cls += lb.cls;
        out.reg += lb.reg;
        out.mask += lb.mask;
        out.positives += lb.positives;
        out.skipped_masks += lb.skipped_masks;
        for (i, g) in grads.iter().enumerate() {
            store.accumulate(ParamId(i), g)?;
        }
    }
    let n = batch.len() as f64;
    out.total /= n;
    out.cls /= n;
    out.reg /= n;
    out.mask /= n;
    store.scale_grads(inv);
    if cfg.grad_clip > 0.0 {
        let norm = store.grad_norm();
        if norm > cfg.grad_clip as f64 {
            store.scale_grads((cfg.grad_clip as f64 / norm) as f32);
        }
    }
    store.sgd_step(lr, cfg.momentum)?;
    Ok(out)
}

/// Dataset indices (and flip flags) making up the batch of `iteration`.
///
/// Every epoch is a fresh permutation seeded by `(seed, epoch)`, so the batch
/// depends only on the iteration number.
pub fn batch_plan(seed: u64, iteration: u64, batch_size: usize, dataset_len: usize, flip: bool) -> Vec<(usize, bool)> {
    let n = dataset_len as u64;
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch_size as u64)
        .map(|j| {
            let pos = iteration * batch_size as u64 + j;
            let epoch = pos / n;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..dataset_len).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(seed, epoch)));
                cached = Some((epoch, perm));
            }
            let idx = cached.as_ref().expect("set above").1[(pos % n) as usize];
            let flipped = flip && scene_seed(seed ^ 0x5eed_f11b, pos) & 1 == 1;
            (idx, flipped)
        })
        .collect()
}

/// Runs iterations `start..cfg.iterations`, calling `on_step` after each one
/// with the completed iteration count.
pub fn train(
    net: &Network,
    store: &mut ParamStore,
    samples: &[SceneSample],
    cfg: &TrainConfig,
    start: u64,
    mut on_step: impl FnMut(u64, &LossBreakdown, &ParamStore) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for it in start..cfg.iterations {
        let batch: Vec<SceneSample> = batch_plan(cfg.seed, it, cfg.batch_size, samples.len(), cfg.flip)
            .into_iter()
            .map(|(i, f)| if f { samples[i].flip_horizontal() } else { samples[i].clone() })
            .collect();
        let lb = train_step(net, store, &batch, cfg, cfg.lr_at(it))?;
        on_step(it + 1, &lb, store)?;
    }
    Ok(())
}
