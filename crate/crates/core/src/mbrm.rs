//! Mask-based boundary refinement.
//!
//! Each box side is re-estimated as the argmax of a posterior over integer
//! coordinates: a discrete Gaussian prior around the regressed side times a
//! likelihood read off the mask's max-profile by a small 1-D convolution.
//! Right and bottom sides are handled by running the left/top computation on
//! the reversed profile, so one kernel serves all four sides.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::checkpoint::Record;
use crate::numerics::{conv1d, conv1d_backward, log_sigmoid, sigmoid, Tensor};

pub const KERNEL_RECORD: &str = "mbrm.kernel";
pub const BIAS_RECORD: &str = "mbrm.bias";
pub const DEFAULT_SCOPE: usize = 4;
pub const DEFAULT_GAMMA: f64 = 0.05;
/// Below this σ (pixels) the prior collapses to a one-hot.
pub const MIN_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Per-column maxima, indexed by x.
    Horizontal,
    /// Per-row maxima, indexed by y.
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    pub fn axis(self) -> Axis {
        match self {
            Side::Left | Side::Right => Axis::Horizontal,
            Side::Top | Side::Bottom => Axis::Vertical,
        }
    }

    /// Whether the side is computed on the reversed profile.
    pub fn mirrored(self) -> bool {
        matches!(self, Side::Right | Side::Bottom)
    }

    /// Pixel index of this side of `b` (inclusive for right/bottom).
    pub fn coordinate(self, b: &BBox) -> f64 {
        match self {
            Side::Left => b.x,
            Side::Right => b.x + b.w - 1.0,
            Side::Top => b.y,
            Side::Bottom => b.y + b.h - 1.0,
        }
    }

    /// Box extent that scales this side's prior width.
    pub fn extent(self, b: &BBox) -> f64 {
        match self.axis() {
            Axis::Horizontal => b.w,
            Axis::Vertical => b.h,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MbrmParams {
    /// Length `2s + 1`.
    pub kernel: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
}

impl Default for MbrmParams {
    fn default() -> Self {
        MbrmParams::zeros(DEFAULT_SCOPE, DEFAULT_GAMMA)
    }
}

impl MbrmParams {
    pub fn zeros(scope: usize, gamma: f64) -> Self {
        MbrmParams {
            kernel: vec![0.0; 2 * scope + 1],
            bias: 0.0,
            gamma,
        }
    }

    pub fn scope(&self) -> usize {
        self.kernel.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.len() < 3 || self.kernel.len() % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "MBRM kernel length must be 2s+1 with s ≥ 1, got {}",
                self.kernel.len()
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("MBRM γ must be ≥ 0, got {}", self.gamma)));
        }
        if !self.bias.is_finite() || self.kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("MBRM parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<Record> {
        let k = self.kernel.iter().map(|&v| v as f32).collect();
        vec![
            Record {
                name: KERNEL_RECORD.into(),
                tensor: Tensor::new(vec![self.kernel.len()], k).expect("non-empty kernel"),
            },
            Record {
                name: BIAS_RECORD.into(),
                tensor: Tensor::full(&[1], self.bias as f32),
            },
        ]
    }

    /// `None` when the checkpoint has no MBRM records.
    pub fn from_records(records: &[Record], gamma: f64) -> Result<Option<Self>> {
        let kernel = records.iter().find(|r| r.name == KERNEL_RECORD);
        let bias = records.iter().find(|r| r.name == BIAS_RECORD);
        let (kernel, bias) = match (kernel, bias) {
            (Some(k), Some(b)) => (k, b),
            (None, None) => return Ok(None),
            _ => {
                return Err(Error::CheckpointMismatch(format!(
                    "only one of `{KERNEL_RECORD}` / `{BIAS_RECORD}` present"
                )))
            }
        };
        if kernel.tensor.rank() != 1 || bias.tensor.len() != 1 {
            return Err(Error::CheckpointMismatch(format!(
                "MBRM records have shapes {:?} / {:?}",
                kernel.tensor.shape(),
                bias.tensor.shape()
            )));
        }
        let p = MbrmParams {
            kernel: kernel.tensor.data().iter().map(|&v| v as f64).collect(),
            bias: bias.tensor.data()[0] as f64,
            gamma,
        };
        p.validate()?;
        Ok(Some(p))
    }
}

/// Per-line maxima of a soft mask given as `height × width` row-major values.
pub fn boundary_profile(mask: &[f32], width: usize, height: usize, axis: Axis) -> Result<Vec<f64>> {
    if width == 0 || height == 0 || mask.len() != width * height {
        return Err(Error::shape(
            "boundary_profile",
            format!("{} values for a {width}×{height} mask", mask.len()),
        ));
    }
    let mut out = match axis {
        Axis::Horizontal => vec![f64::NEG_INFINITY; width],
        Axis::Vertical => vec![f64::NEG_INFINITY; height],
    };
    for (r, row) in mask.chunks_exact(width).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let slot = match axis {
                Axis::Horizontal => &mut out[c],
                Axis::Vertical => &mut out[r],
            };
            *slot = slot.max(v as f64);
        }
    }
    Ok(out)
}

/// Likelihood of each coordinate being the given side.
pub fn boundary_likelihood(profile: &[f64], params: &MbrmParams, side: Side) -> Result<Vec<f64>> {
    let mut p = profile.to_vec();
    if side.mirrored() {
        p.reverse();
    }
    let mut l: Vec<f64> = conv1d(&p, &params.kernel)?
        .into_iter()
        .map(|z| sigmoid(z + params.bias))
        .collect();
    if side.mirrored() {
        l.reverse();
    }
    Ok(l)
}

fn sigma_of(extent: f64, gamma: f64) -> f64 {
    gamma * extent
}

/// Unnormalized log prior; `None` for the one-hot regime.
fn log_prior_weights(mu: f64, sigma: f64, n: usize) -> Option<Vec<f64>> {
    if !(sigma >= MIN_SIGMA) {
        return None;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    Some((0..n).map(|i| -(i as f64 - mu).powi(2) * inv).collect())
}

fn one_hot_index(mu: f64, n: usize) -> usize {
    mu.round().clamp(0.0, (n - 1) as f64) as usize
}

/// Discrete Gaussian over `0..n` centred at `mu` with σ = γ·extent.
pub fn boundary_prior(mu: f64, extent: f64, gamma: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "boundary_prior needs n ≥ 1 and finite μ (n={n}, μ={mu})"
        )));
    }
    match log_prior_weights(mu, sigma_of(extent, gamma), n) {
        None => {
            let mut p = vec![0.0; n];
            p[one_hot_index(mu, n)] = 1.0;
            Ok(p)
        }
        Some(lw) => {
            let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = lw.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            Ok(e.into_iter().map(|v| v / z).collect())
        }
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryDistribution {
    pub prior: Vec<f64>,
    pub likelihood: Vec<f64>,
    pub posterior: Vec<f64>,
    pub argmax: usize,
    /// The prior·likelihood product vanished; `posterior` is the prior.
    pub degenerate: bool,
}

pub fn boundary_posterior(prior: &[f64], likelihood: &[f64]) -> Result<BoundaryDistribution> {
    if prior.len() != likelihood.len() || prior.is_empty() {
        return Err(Error::shape(
            "boundary_posterior",
            format!("prior {} vs likelihood {}", prior.len(), likelihood.len()),
        ));
    }
    let prod: Vec<f64> = prior.iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let z: f64 = prod.iter().sum();
    let (posterior, degenerate) = if z > 0.0 && z.is_finite() {
        (prod.iter().map(|v| v / z).collect::<Vec<_>>(), false)
    } else {
        (prior.to_vec(), true)
    };
    Ok(BoundaryDistribution {
        prior: prior.to_vec(),
        likelihood: likelihood.to_vec(),
        argmax: argmax_lowest(&posterior),
        posterior,
        degenerate,
    })
}

/// Refines one side; coordinates are computed in the side's own (possibly
/// mirrored) frame and mapped back, so a flipped input yields the flipped
/// answer exactly.
pub fn refine_side(profile: &[f64], params: &MbrmParams, side: Side, regressed: &BBox) -> Result<BoundaryDistribution> {
    let n = profile.len();
    let mut frame = profile.to_vec();
    let mut mu = side.coordinate(regressed);
    if side.mirrored() {
        frame.reverse();
        mu = (n - 1) as f64 - mu;
    }
    let frame_side = if side.axis() == Axis::Horizontal { Side::Left } else { Side::Top };
    let prior = boundary_prior(mu, side.extent(regressed), params.gamma, n)?;
    let likelihood = boundary_likelihood(&frame, params, frame_side)?;
    let mut d = boundary_posterior(&prior, &likelihood)?;
    if side.mirrored() {
        d.prior.reverse();
        d.likelihood.reverse();
        d.posterior.reverse();
        d.argmax = n - 1 - d.argmax;
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineStatus {
    /// γ = 0: the input box is returned untouched.
    Bypassed,
    Refined,
    /// The mask is all zero; the input box is returned.
    NoEvidence,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    pub bbox: BBox,
    pub status: RefineStatus,
    /// Per axis (horizontal, vertical): the posterior argmaxes were out of
    /// order and the regressed coordinates were kept.
    pub fallback: [bool; 2],
}

/// Refines `regressed` against a soft mask `mask` of `height × width` values.
pub fn refine_box(regressed: &BBox, mask: &[f32], width: usize, height: usize, params: &MbrmParams) -> Result<Refinement> {
    params.validate()?;
    if params.gamma == 0.0 {
        return Ok(Refinement {
            bbox: *regressed,
            status: RefineStatus::Bypassed,
            fallback: [false; 2],
        });
    }
    let mx = boundary_profile(mask, width, height, Axis::Horizontal)?;
    if mx.iter().all(|&v| v <= 0.0) || !regressed.is_finite() {
        return Ok(Refinement {
            bbox: *regressed,
            status: RefineStatus::NoEvidence,
            fallback: [false; 2],
        });
    }
    let my = boundary_profile(mask, width, height, Axis::Vertical)?;
    let clipped = regressed.clip(width as f64, height as f64);
    let mut fallback = [false; 2];
    let mut axis_range = |lo_side: Side, hi_side: Side, profile: &[f64], slot: usize| -> Result<(f64, f64)> {
        let (orig_lo, orig_len) = match slot {
            0 => (clipped.x, clipped.w),
            _ => (clipped.y, clipped.h),
        };
        if orig_len <= 0.0 {
            fallback[slot] = true;
            return Ok((orig_lo, orig_len));
        }
        let lo = refine_side(profile, params, lo_side, &clipped)?.argmax;
        let hi = refine_side(profile, params, hi_side, &clipped)?.argmax;
        if lo >= hi {
            fallback[slot] = true;
            Ok((orig_lo, orig_len))
        } else {
            Ok((lo as f64, (hi - lo + 1) as f64))
        }
    };
    let (x, w) = axis_range(Side::Left, Side::Right, &mx, 0)?;
    let (y, h) = axis_range(Side::Top, Side::Bottom, &my, 1)?;
    Ok(Refinement {
        bbox: BBox::new(x, y, w, h),
        status: RefineStatus::Refined,
        fallback,
    })
}

/// One MBRM training example: mask profiles plus matched gt and regressed boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct MbrmSample {
    pub profile_x: Vec<f64>,
    pub profile_y: Vec<f64>,
    pub gt: BBox,
    pub regressed: BBox,
}

impl MbrmSample {
    pub fn from_mask(mask: &[f32], width: usize, height: usize, gt: BBox, regressed: BBox) -> Result<Self> {
        Ok(MbrmSample {
            profile_x: boundary_profile(mask, width, height, Axis::Horizontal)?,
            profile_y: boundary_profile(mask, width, height, Axis::Vertical)?,
            gt,
            regressed: regressed.clip(width as f64, height as f64),
        })
    }

    fn profile(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::Horizontal => &self.profile_x,
            Axis::Vertical => &self.profile_y,
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Cross entropy of one side's posterior against the gt coordinate, with
/// gradients for the kernel and bias added into `dk` / `db`. Returns `None`
/// when the prior is one-hot (no gradient signal).
fn side_loss(sample: &MbrmSample, side: Side, params: &MbrmParams, dk: &mut [f64], db: &mut f64) -> Result<Option<f64>> {
    let n = sample.profile(side.axis()).len();
    let mut frame = sample.profile(side.axis()).to_vec();
    let mut mu = side.coordinate(&sample.regressed);
    let mut target = side.coordinate(&sample.gt).round().clamp(0.0, (n - 1) as f64) as usize;
    if side.mirrored() {
        frame.reverse();
        mu = (n - 1) as f64 - mu;
        target = n - 1 - target;
    }
    let Some(lw) = log_prior_weights(mu, sigma_of(side.extent(&sample.regressed), params.gamma), n) else {
        return Ok(None);
    };
    let z: Vec<f64> = conv1d(&frame, &params.kernel)?.into_iter().map(|v| v + params.bias).collect();
    let joint: Vec<f64> = lw.iter().zip(&z).map(|(&p, &zi)| p + log_sigmoid(zi)).collect();
    let lse = log_sum_exp(&joint);
    let loss = lse - joint[target];
    let dz: Vec<f64> = (0..n)
        .map(|i| {
            let post = (joint[i] - lse).exp();
            let onehot = if i == target { 1.0 } else { 0.0 };
            (post - onehot) * (1.0 - sigmoid(z[i]))
        })
        .collect();
    let (_, dker) = conv1d_backward(&frame, &params.kernel, &dz)?;
    for (a, b) in dk.iter_mut().zip(dker) {
        *a += b;
    }
    *db += dz.iter().sum::<f64>();
    Ok(Some(loss))
}

/// Mean posterior cross entropy over every side of every sample, and its
/// gradient `(d kernel, d bias)`.
pub fn mbrm_loss(samples: &[&MbrmSample], params: &MbrmParams) -> Result<(f64, Vec<f64>, f64)> {
    let mut dk = vec![0.0; params.kernel.len()];
    let mut db = 0.0;
    let mut total = 0.0;
    let mut terms = 0usize;
    for s in samples {
        for side in Side::ALL {
            if let Some(l) = side_loss(s, side, params, &mut dk, &mut db)? {
                total += l;
                terms += 1;
            }
        }
    }
    if terms == 0 {
        return Ok((0.0, dk, 0.0));
    }
    let inv = 1.0 / terms as f64;
    dk.iter_mut().for_each(|v| *v *= inv);
    Ok((total * inv, dk, db * inv))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MbrmTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for MbrmTrainConfig {
    fn default() -> Self {
        MbrmTrainConfig {
            lr: 1.0,
            momentum: 0.9,
            iterations: 1000,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MbrmTrainOutcome {
    pub params: MbrmParams,
    /// Mean loss per iteration.
    pub losses: Vec<f64>,
}

/// Momentum SGD on the kernel and bias only. Batches cycle through `samples`
/// in order, so the result depends only on the inputs.
pub fn train_mbrm(samples: &[MbrmSample], init: &MbrmParams, cfg: &MbrmTrainConfig) -> Result<MbrmTrainOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    init.validate()?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "train_mbrm needs batch_size ≥ 1 and lr > 0, got {} / {}",
            cfg.batch_size, cfg.lr
        )));
    }
    let mut params = init.clone();
    let mut vk = vec![0.0; params.kernel.len()];
    let mut vb = 0.0;
    let mut losses = Vec::with_capacity(cfg.iterations);
    let b = cfg.batch_size.min(samples.len());
    for it in 0..cfg.iterations {
        let batch: Vec<&MbrmSample> = (0..b).map(|j| &samples[(it * b + j) % samples.len()]).collect();
        let (loss, dk, db) = mbrm_loss(&batch, &params)?;
        if !loss.is_finite() || !db.is_finite() || dk.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss("mbrm"));
        }
        losses.push(loss);
        for ((w, v), g) in params.kernel.iter_mut().zip(&mut vk).zip(&dk) {
            *v = cfg.momentum * *v + g;
            *w -= cfg.lr * *v;
        }
        vb = cfg.momentum * vb + db;
        params.bias -= cfg.lr * vb;
    }
    // keep exactly what a checkpoint round trip would give back
    params.kernel.iter_mut().for_each(|v| *v = *v as f32 as f64);
    params.bias = params.bias as f32 as f64;
    Ok(MbrmTrainOutcome { params, losses })
}
