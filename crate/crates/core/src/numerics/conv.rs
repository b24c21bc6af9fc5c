//! Zero-padded 2-D and 1-D convolutions (cross-correlation) with analytic
//! backward passes.
//!
//! `conv2d` is lowered to a matrix product over an im2col buffer. Padding is
//! `k/2` on each side so stride-1 outputs keep the input's spatial size.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize) -> Result<(Self, usize)> {
        let (c_in, h, w) = input.chw("conv2d")?;
        let [c_out, wc_in, kh, kw] = weight.shape()[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be C_out×C_in×k_h×k_w, got {:?}", weight.shape()),
            ));
        };
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels, kernel expects {wc_in}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel extents must be odd, got {kh}×{kw}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be ≥ 1".into()));
        }
        let oh = (h + 2 * (kh / 2) - kh) / stride + 1;
        let ow = (w + 2 * (kw / 2) - kw) / stride + 1;
        Ok((
            Geometry {
                c_in,
                h,
                w,
                kh,
                kw,
                stride,
                oh,
                ow,
            },
            c_out,
        ))
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

fn im2col<T: Real>(g: &Geometry, input: &[T], cols: &mut [T]) {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let n = g.cols();
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride) as isize + ky as isize - ph;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - pw;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Geometry, cols: &[T], out: &mut [T]) {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let n = g.cols();
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride) as isize + ky as isize - ph;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride) as isize + kx as isize - pw;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution of a `C_in×H×W` map with `C_out×C_in×k_h×k_w` kernels.
///
/// Stride 1 preserves `H×W`; stride 2 yields `⌈H/2⌉×⌈W/2⌉`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (g, c_out) = Geometry::new(input, weight, stride)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {c_out} output channels", b.len()),
            ));
        }
    }
    let n = g.cols();
    let mut out = vec![T::zero(); c_out * n];
    if let Some(b) = bias {
        for (co, &bv) in b.data().iter().enumerate() {
            out[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = bv);
        }
    }
    if g.is_pointwise() {
        T::gemm(c_out, g.rows(), n, weight.data(), false, input.data(), false, &mut out, bias.is_some());
    } else {
        let mut cols = vec![T::zero(); g.rows() * n];
        im2col(&g, input.data(), &mut cols);
        T::gemm(c_out, g.rows(), n, weight.data(), false, &cols, false, &mut out, bias.is_some());
    }
    Tensor::new(vec![c_out, g.oh, g.ow], out)
}

/// Gradients of a convolution with respect to its input, kernels and bias.
#[derive(Clone, Debug)]
pub struct Conv2dGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let (g, c_out) = Geometry::new(input, weight, stride)?;
    if grad_out.shape() != [c_out, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?} does not match output {:?}",
                grad_out.shape(),
                [c_out, g.oh, g.ow]
            ),
        ));
    }
    let n = g.cols();
    let k = g.rows();
    let go = grad_out.data();

    let bias: Vec<T> = (0..c_out)
        .map(|co| go[co * n..(co + 1) * n].iter().copied().sum())
        .collect();

    let mut dw = vec![T::zero(); c_out * k];
    let mut dinput = vec![T::zero(); input.len()];
    if g.is_pointwise() {
        // dW = dOut · Xᵀ, dX = Wᵀ · dOut
        T::gemm(c_out, n, k, go, false, input.data(), true, &mut dw, false);
        T::gemm(k, c_out, n, weight.data(), true, go, false, &mut dinput, false);
    } else {
        let mut cols = vec![T::zero(); k * n];
        im2col(&g, input.data(), &mut cols);
        T::gemm(c_out, n, k, go, false, &cols, true, &mut dw, false);
        T::gemm(k, c_out, n, weight.data(), true, go, false, &mut cols, false);
        col2im(&g, &cols, &mut dinput);
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), dinput)?,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![c_out], bias)?,
    })
}

fn check_conv1d<T>(kernel: &[T]) -> Result<usize> {
    if kernel.len() % 2 == 0 {
        return Err(Error::shape(
            "conv1d",
            format!("kernel length must be odd, got {}", kernel.len()),
        ));
    }
    Ok(kernel.len() / 2)
}

/// `out[i] = Σ_j kernel[j] · signal[i + j − s]`, zero outside the signal.
pub fn conv1d<T: Real>(signal: &[T], kernel: &[T]) -> Result<Vec<T>> {
    let s = check_conv1d(kernel)? as isize;
    let n = signal.len() as isize;
    Ok((0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, &kv)| {
                    let p = i + j as isize - s;
                    (p >= 0 && p < n).then(|| kv * signal[p as usize])
                })
                .fold(T::zero(), |a, b| a + b)
        })
        .collect())
}

/// Returns `(d signal, d kernel)`.
pub fn conv1d_backward<T: Real>(signal: &[T], kernel: &[T], grad_out: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let s = check_conv1d(kernel)? as isize;
    if grad_out.len() != signal.len() {
        return Err(Error::shape(
            "conv1d_backward",
            format!("grad length {} vs signal {}", grad_out.len(), signal.len()),
        ));
    }
    let n = signal.len() as isize;
    let mut dsig = vec![T::zero(); signal.len()];
    let mut dker = vec![T::zero(); kernel.len()];
    for i in 0..n {
        let g = grad_out[i as usize];
        for (j, &kv) in kernel.iter().enumerate() {
            let p = i + j as isize - s;
            if p >= 0 && p < n {
                dsig[p as usize] = dsig[p as usize] + kv * g;
                dker[j] = dker[j] + signal[p as usize] * g;
            }
        }
    }
    Ok((dsig, dker))
}
