//! Central finite-difference gradient checking in double precision.

/// Default finite-difference step.
pub const GRAD_CHECK_EPS: f64 = 1e-4;

/// Compares an analytic gradient against central differences of `f` at `x`.
///
/// Returns `max_i |analytic_i − numeric_i| / max_i |numeric_i|`, so a
/// backward pass that is uniformly off by a factor `c` reports `|c − 1|`.
/// When the numeric gradient is identically zero the absolute error is
/// returned instead.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = numeric_gradient(&f, x, eps);
    let max_abs_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        max_abs_err / scale
    } else {
        max_abs_err
    }
}

pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [0.3, -1.2, 2.0];
        let good: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(grad_check(f, &x, &good, GRAD_CHECK_EPS) < 1e-8);
        let bad: Vec<f64> = good.iter().map(|g| 2.0 * g).collect();
        assert!((grad_check(f, &x, &bad, GRAD_CHECK_EPS) - 1.0).abs() < 1e-6);
    }
}
