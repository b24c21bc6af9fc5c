use super::activation::{log_sigmoid, sigmoid};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Probability floor applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Weighted pixel-wise binary cross entropy result.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelCe<T> {
    pub loss: T,
    /// Σ weight over supervised pixels.
    pub total_weight: T,
    /// Set when every weight is zero; `loss` is then 0.
    pub no_supervised_pixels: bool,
}

fn check_lengths(op: &'static str, a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::shape(op, format!("lengths {a}, {b}, {c} differ")));
    }
    Ok(())
}

#[inline]
fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::of_f64(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Per-pixel `−[t ln p + (1−t) ln(1−p)]` with `p` clamped to `[ε, 1−ε]`.
#[inline]
pub fn pixel_ce_term<T: Real>(p: T, t: T) -> T {
    let p = clamp_prob(p);
    -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
}

/// Weighted mean cross entropy over pixels with positive weight.
pub fn pixel_cross_entropy<T: Real>(fg_prob: &[T], target: &[T], weight: &[T]) -> Result<PixelCe<T>> {
    check_lengths("pixel_cross_entropy", fg_prob.len(), target.len(), weight.len())?;
    let mut num = T::zero();
    let mut den = T::zero();
    for ((&p, &t), &w) in fg_prob.iter().zip(target).zip(weight) {
        if w > T::zero() {
            num = num + w * pixel_ce_term(p, t);
            den = den + w;
        }
    }
    if den <= T::zero() {
        return Ok(PixelCe {
            loss: T::zero(),
            total_weight: T::zero(),
            no_supervised_pixels: true,
        });
    }
    Ok(PixelCe {
        loss: num / den,
        total_weight: den,
        no_supervised_pixels: false,
    })
}

/// Gradient of [`pixel_cross_entropy`] with respect to `fg_prob`.
///
/// Pixels whose probability sits in the clamped range get zero gradient.
pub fn pixel_cross_entropy_backward<T: Real>(fg_prob: &[T], target: &[T], weight: &[T]) -> Result<Vec<T>> {
    check_lengths("pixel_cross_entropy_backward", fg_prob.len(), target.len(), weight.len())?;
    let den: T = weight.iter().copied().filter(|&w| w > T::zero()).sum();
    let eps = T::of_f64(PROB_EPS);
    Ok(fg_prob
        .iter()
        .zip(target)
        .zip(weight)
        .map(|((&p, &t), &w)| {
            if w <= T::zero() || den <= T::zero() || p < eps || p > T::one() - eps {
                T::zero()
            } else {
                w * (-t / p + (T::one() - t) / (T::one() - p)) / den
            }
        })
        .collect())
}

/// Per-anchor supervision for the classification head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FocalTarget {
    Positive(usize),
    Negative,
    Ignore,
}

/// Sigmoid focal loss over anchor-major logits (`targets.len() × num_classes`).
///
/// Normalized by the number of positive anchors (at least 1). Returns the
/// loss and its gradient with respect to `logits`.
pub fn focal_loss<T: Real>(
    logits: &[T],
    targets: &[FocalTarget],
    num_classes: usize,
    alpha: T,
    gamma: T,
) -> Result<(T, Vec<T>)> {
    if logits.len() != targets.len() * num_classes {
        return Err(Error::shape(
            "focal_loss",
            format!(
                "{} logits for {} anchors × {num_classes} classes",
                logits.len(),
                targets.len()
            ),
        ));
    }
    let num_pos = targets
        .iter()
        .filter(|t| matches!(t, FocalTarget::Positive(_)))
        .count()
        .max(1);
    let norm = T::of_f64(num_pos as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    let one = T::one();
    for (a, target) in targets.iter().enumerate() {
        let positive = match *target {
            FocalTarget::Ignore => continue,
            FocalTarget::Positive(c) => Some(c),
            FocalTarget::Negative => None,
        };
        for c in 0..num_classes {
            let idx = a * num_classes + c;
            let x = logits[idx];
            let p = sigmoid(x);
            if positive == Some(c) {
                // −α (1−p)^γ ln p
                let lp = log_sigmoid(x).max(T::of_f64(PROB_EPS).ln());
                let mod_ = (one - p).powf(gamma);
                loss = loss - alpha * mod_ * lp;
                grad[idx] = alpha * mod_ * (gamma * p * lp - (one - p)) / norm;
            } else {
                // −(1−α) p^γ ln(1−p)
                let lq = log_sigmoid(-x).max(T::of_f64(PROB_EPS).ln());
                let mod_ = p.powf(gamma);
                loss = loss - (one - alpha) * mod_ * lq;
                grad[idx] = -(one - alpha) * mod_ * (gamma * (one - p) * lq - p) / norm;
            }
        }
    }
    Ok((loss / norm, grad))
}

/// Smooth-L1 summed over coordinates; returns the value and `d/d pred`.
pub fn smooth_l1<T: Real>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    let half = T::of_f64(0.5);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            if d.abs() < T::one() {
                value = value + half * d * d;
                d
            } else {
                value = value + d.abs() - half;
                d.signum()
            }
        })
        .collect();
    (value, grad)
}
