use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Source taps for one output coordinate under the sample-center convention.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (x.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let frac = if hi == lo { 0.0 } else { x - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

fn check<T: Real>(map: &Tensor<T>, out_h: usize, out_w: usize) -> Result<(usize, usize, usize)> {
    let (c, h, w) = map.chw("bilinear_upsample")?;
    if out_h < h || out_w < w {
        return Err(Error::InvalidArgument(format!(
            "bilinear_upsample only enlarges: {h}×{w} → {out_h}×{out_w}"
        )));
    }
    Ok((c, h, w))
}

/// Bilinear resize of a `C×h×w` map to `C×H×W` (align-corners false).
pub fn bilinear_upsample<T: Real>(map: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = check(map, out_h, out_w)?;
    let (ty, tx) = (taps(h, out_h), taps(w, out_w));
    let src = map.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in &ty {
            let fy = T::of_f64(y.frac);
            let (r0, r1) = (&plane[y.lo * w..(y.lo + 1) * w], &plane[y.hi * w..(y.hi + 1) * w]);
            for x in &tx {
                let fx = T::of_f64(x.frac);
                let top = r0[x.lo] + (r0[x.hi] - r0[x.lo]) * fx;
                let bot = r1[x.lo] + (r1[x.hi] - r1[x.lo]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Gradient of [`bilinear_upsample`] with respect to its input map.
pub fn bilinear_upsample_backward<T: Real>(
    in_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [c, h, w] = in_shape[..] else {
        return Err(Error::shape("bilinear_upsample_backward", format!("{in_shape:?}")));
    };
    let (gc, out_h, out_w) = grad_out.chw("bilinear_upsample_backward")?;
    if gc != c || out_h < h || out_w < w {
        return Err(Error::shape(
            "bilinear_upsample_backward",
            format!("{in_shape:?} vs grad {:?}", grad_out.shape()),
        ));
    }
    let (ty, tx) = (taps(h, out_h), taps(w, out_w));
    let g = grad_out.data();
    let mut din = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut din[ch * h * w..(ch + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            let fy = T::of_f64(y.frac);
            for (ox, x) in tx.iter().enumerate() {
                let fx = T::of_f64(x.frac);
                let gv = g[(ch * out_h + oy) * out_w + ox];
                let one = T::one();
                plane[y.lo * w + x.lo] = plane[y.lo * w + x.lo] + gv * (one - fy) * (one - fx);
                plane[y.lo * w + x.hi] = plane[y.lo * w + x.hi] + gv * (one - fy) * fx;
                plane[y.hi * w + x.lo] = plane[y.hi * w + x.lo] + gv * fy * (one - fx);
                plane[y.hi * w + x.hi] = plane[y.hi * w + x.hi] + gv * fy * fx;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), din)
}
