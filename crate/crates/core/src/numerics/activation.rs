use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
#[inline]
pub fn log_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid_map<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Backward through `y = σ(x)` given the forward output `y`.
pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = *gv * y * (T::one() - y);
    }
    g
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Backward through relu given the forward output (or input; the mask is the same).
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &mut Tensor<T>) {
    for (g, &y) in grad_out.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

fn check_two_channels<T: Real>(map: &Tensor<T>, op: &'static str) -> Result<usize> {
    let (c, h, w) = map.chw(op)?;
    if c != 2 {
        return Err(Error::shape(op, format!("expected 2 channels, got {c}")));
    }
    Ok(h * w)
}

/// Per-pixel softmax over the two (fg, bg) channels of a `2×h×w` map.
pub fn softmax_channels<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_two_channels(logits, "softmax_channels")?;
    let d = logits.data();
    let mut out = vec![T::zero(); 2 * n];
    for i in 0..n {
        let (a, b) = (d[i], d[n + i]);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let s = ea + eb;
        out[i] = ea / s;
        out[n + i] = eb / s;
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Backward through [`softmax_channels`] given its output.
pub fn softmax_channels_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_two_channels(output, "softmax_channels_backward")?;
    if grad_out.shape() != output.shape() {
        return Err(Error::shape(
            "softmax_channels_backward",
            format!("{:?} vs {:?}", grad_out.shape(), output.shape()),
        ));
    }
    let (y, g) = (output.data(), grad_out.data());
    let mut dx = vec![T::zero(); 2 * n];
    for i in 0..n {
        let dot = y[i] * g[i] + y[n + i] * g[n + i];
        dx[i] = y[i] * (g[i] - dot);
        dx[n + i] = y[n + i] * (g[n + i] - dot);
    }
    Tensor::new(output.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let r = relu(&Tensor::<f64>::new(vec![2], vec![-3.0, 3.0]).unwrap());
        assert_eq!(r.data(), &[0.0, 3.0]);
        let y = Tensor::<f64>::full(&[1], 0.5);
        let g = sigmoid_backward(&y, &Tensor::full(&[1], 1.0));
        assert_eq!(g.data()[0], 0.25);
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0f32).abs() < 1e-30);
    }

    #[test]
    fn softmax_examples() {
        let z = Tensor::<f64>::zeros(&[2, 3, 3]);
        let p = softmax_channels(&z).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        let l = Tensor::<f64>::new(vec![2, 1, 1], vec![3f64.ln(), 0.0]).unwrap();
        let p = softmax_channels(&l).unwrap();
        assert!((p.data()[0] - 0.75).abs() < 1e-12);
        assert!((p.data()[1] - 0.25).abs() < 1e-12);
        assert!(softmax_channels(&Tensor::<f64>::zeros(&[3, 2, 2])).is_err());
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let l = Tensor::<f32>::new(vec![2, 1, 2], vec![1e4, -1e4, -1e4, 1e4]).unwrap();
        let p = softmax_channels(&l).unwrap();
        assert!(p.all_finite());
        assert_eq!(p.data(), &[1.0, 0.0, 0.0, 1.0]);
    }
}
