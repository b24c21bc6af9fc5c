//! Finite-difference checks of every backward pass, in f64 over several seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twostream::corr_crop::{correlate, correlate_logits, correlate_logits_backward, mask_training_loss, MaskLossConfig, MaskObject};
use twostream::datagen::BinaryMask;
use twostream::mbrm::{mbrm_loss, MbrmParams, MbrmSample};
use twostream::numerics::*;
use twostream::BBox;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn assert_close(what: &str, seed: u64, err: f64) {
    assert!(err <= TOL, "{what} (seed {seed}): relative error {err:.3e}");
}

#[test]
fn conv2d_input_weight_bias() {
    for stride in [1, 2] {
        for k in [1, 3] {
            for seed in SEEDS {
                let mut r = rng(seed * 10 + stride as u64 + k as u64);
                let (ci, co, h, w) = (2, 3, 5, 6);
                let x = randn(&mut r, ci * h * w);
                let wt = randn(&mut r, co * ci * k * k);
                let b = randn(&mut r, co);
                let out = conv2d(&tensor(&[ci, h, w], &x), &tensor(&[co, ci, k, k], &wt), Some(&tensor(&[co], &b)), stride).unwrap();
                let up = randn(&mut r, out.len());
                let g = conv2d_backward(&tensor(&[ci, h, w], &x), &tensor(&[co, ci, k, k], &wt), stride, &tensor(out.shape(), &up)).unwrap();
                let f = |x: &[f64], wt: &[f64], b: &[f64]| {
                    let o = conv2d(&tensor(&[ci, h, w], x), &tensor(&[co, ci, k, k], wt), Some(&tensor(&[co], b)), stride).unwrap();
                    dot(o.data(), &up)
                };
                assert_close("conv2d input", seed, grad_check(|v| f(v, &wt, &b), &x, g.input.data(), GRAD_CHECK_EPS));
                assert_close("conv2d weight", seed, grad_check(|v| f(&x, v, &b), &wt, g.weight.data(), GRAD_CHECK_EPS));
                assert_close("conv2d bias", seed, grad_check(|v| f(&x, &wt, v), &b, g.bias.data(), GRAD_CHECK_EPS));
            }
        }
    }
}

#[test]
fn conv1d_signal_and_kernel() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let s = randn(&mut r, 12);
        let k = randn(&mut r, 5);
        let up = randn(&mut r, 12);
        let (ds, dk) = conv1d_backward(&s, &k, &up).unwrap();
        let f = |s: &[f64], k: &[f64]| dot(&conv1d(s, k).unwrap(), &up);
        assert_close("conv1d signal", seed, grad_check(|v| f(v, &k), &s, &ds, GRAD_CHECK_EPS));
        assert_close("conv1d kernel", seed, grad_check(|v| f(&s, v), &k, &dk, GRAD_CHECK_EPS));
    }
}

#[test]
fn relu_and_sigmoid() {
    for seed in SEEDS {
        let mut r = rng(seed);
        // keep inputs away from the relu kink
        let x: Vec<f64> = randn(&mut r, 20).into_iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { v }).collect();
        let up = randn(&mut r, 20);
        let out = relu(&tensor(&[20], &x));
        let mut g = tensor(&[20], &up);
        relu_backward(&out, &mut g);
        let f = |x: &[f64]| dot(relu(&tensor(&[20], x)).data(), &up);
        assert_close("relu", seed, grad_check(f, &x, g.data(), GRAD_CHECK_EPS));

        let s = sigmoid_map(&tensor(&[20], &x));
        let g = sigmoid_backward(&s, &tensor(&[20], &up));
        let f = |x: &[f64]| dot(sigmoid_map(&tensor(&[20], x)).data(), &up);
        assert_close("sigmoid", seed, grad_check(f, &x, g.data(), GRAD_CHECK_EPS));
    }
}

#[test]
fn channel_softmax() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let shape = [2, 3, 4];
        let x: Vec<f64> = randn(&mut r, 24).iter().map(|v| 3.0 * v).collect();
        let up = randn(&mut r, 24);
        let out = softmax_channels(&tensor(&shape, &x)).unwrap();
        let g = softmax_channels_backward(&out, &tensor(&shape, &up)).unwrap();
        let f = |x: &[f64]| dot(softmax_channels(&tensor(&shape, x)).unwrap().data(), &up);
        assert_close("softmax", seed, grad_check(f, &x, g.data(), GRAD_CHECK_EPS));
    }
}

#[test]
fn upsample() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let (c, h, w, oh, ow) = (2, 3, 4, 11, 9);
        let x = randn(&mut r, c * h * w);
        let up = randn(&mut r, c * oh * ow);
        let g = bilinear_upsample_backward(&[c, h, w], &tensor(&[c, oh, ow], &up)).unwrap();
        let f = |x: &[f64]| dot(bilinear_upsample(&tensor(&[c, h, w], x), oh, ow).unwrap().data(), &up);
        assert_close("bilinear_upsample", seed, grad_check(f, &x, g.data(), GRAD_CHECK_EPS));
    }
}

#[test]
fn pixel_ce() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let n = 15;
        let p: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
        let t: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
        let wt: Vec<f64> = (0..n).map(|_| r.random_range(0..3) as f64).collect();
        let g = pixel_cross_entropy_backward(&p, &t, &wt).unwrap();
        let f = |p: &[f64]| pixel_cross_entropy(p, &t, &wt).unwrap().loss;
        assert_close("pixel_cross_entropy", seed, grad_check(f, &p, &g, GRAD_CHECK_EPS));
    }
}

#[test]
fn focal_and_smooth_l1() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let (a, c) = (6, 3);
        let x: Vec<f64> = randn(&mut r, a * c).iter().map(|v| 2.0 * v).collect();
        let targets: Vec<FocalTarget> = (0..a)
            .map(|i| match i % 3 {
                0 => FocalTarget::Positive(r.random_range(0..c)),
                1 => FocalTarget::Negative,
                _ => FocalTarget::Ignore,
            })
            .collect();
        let (_, g) = focal_loss(&x, &targets, c, 0.25, 2.0).unwrap();
        let f = |x: &[f64]| focal_loss(x, &targets, c, 0.25, 2.0).unwrap().0;
        assert_close("focal_loss", seed, grad_check(f, &x, &g, GRAD_CHECK_EPS));

        let pred: Vec<f64> = randn(&mut r, 8).iter().map(|v| 3.0 * v).collect();
        let target = randn(&mut r, 8);
        let (_, g) = smooth_l1(&pred, &target);
        let f = |p: &[f64]| smooth_l1(p, &target).0;
        assert_close("smooth_l1", seed, grad_check(f, &pred, &g, GRAD_CHECK_EPS));
    }
}

#[test]
fn correlation_logits() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let (d, h, w) = (4, 3, 5);
        let pix = randn(&mut r, d * h * w);
        let obj = randn(&mut r, 2 * d);
        let up = randn(&mut r, 2 * h * w);
        let (dp, dobj) = correlate_logits_backward(&tensor(&[d, h, w], &pix), &tensor(&[2, d], &obj), &tensor(&[2, h, w], &up)).unwrap();
        let f = |p: &[f64], o: &[f64]| dot(correlate_logits(&tensor(&[d, h, w], p), &tensor(&[2, d], o)).unwrap().data(), &up);
        assert_close("correlate pixel", seed, grad_check(|v| f(v, &obj), &pix, dp.data(), GRAD_CHECK_EPS));
        assert_close("correlate object", seed, grad_check(|v| f(&pix, v), &obj, dobj.data(), GRAD_CHECK_EPS));
    }
}

/// Correlation → softmax → OHEM-weighted cross entropy, differentiated end to
/// end with respect to both representations.
#[test]
fn mask_loss_through_correlation() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let (d, h, w) = (3, 8, 8);
        let pix = randn(&mut r, d * h * w);
        let obj = randn(&mut r, 2 * d);
        let gt = BinaryMask::from_fn(w, h, |c, row| (2..5).contains(&c) && (3..6).contains(&row));
        let gt_box = BBox::new(2.0, 3.0, 3.0, 3.0);
        let cfg = MaskLossConfig::default();
        let loss_of = |p: &[f64], o: &[f64]| {
            let probs = correlate(&tensor(&[d, h, w], p), &tensor(&[2, d], o)).unwrap();
            let objs = [MaskObject { probs: &probs, gt_mask: &gt, gt_box }];
            mask_training_loss(&objs, &cfg).unwrap()
        };
        let ml = loss_of(&pix, &obj);
        let lg = ml.logit_grads[0].as_ref().unwrap();
        let (dp, dobj) = correlate_logits_backward(&tensor(&[d, h, w], &pix), &tensor(&[2, d], &obj), lg).unwrap();
        assert_close("mask loss pixel", seed, grad_check(|v| loss_of(v, &obj).loss, &pix, dp.data(), GRAD_CHECK_EPS));
        assert_close("mask loss object", seed, grad_check(|v| loss_of(&pix, v).loss, &obj, dobj.data(), GRAD_CHECK_EPS));
    }
}

#[test]
fn mbrm_kernel_and_bias() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let n = 30;
        let samples: Vec<MbrmSample> = (0..3)
            .map(|_| {
                let x0 = r.random_range(5..12);
                let x1 = r.random_range(18..26);
                let profile_x: Vec<f64> = (0..n).map(|i| if (x0..=x1).contains(&i) { r.random_range(0.6..1.0) } else { r.random_range(0.0..0.3) }).collect();
                let profile_y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
                let gt = BBox::new(x0 as f64, 6.0, (x1 - x0 + 1) as f64, 15.0);
                let regressed = BBox::new(gt.x + r.random_range(-3.0..3.0), 7.0, gt.w + r.random_range(-3.0..3.0), 13.0);
                MbrmSample { profile_x, profile_y, gt, regressed }
            })
            .collect();
        let refs: Vec<&MbrmSample> = samples.iter().collect();
        let mut params = MbrmParams::zeros(2, 0.2);
        params.kernel = randn(&mut r, 5);
        params.bias = r.random_range(-1.0..1.0);
        let (_, dk, db) = mbrm_loss(&refs, &params).unwrap();
        let mut theta = params.kernel.clone();
        theta.push(params.bias);
        let mut analytic = dk;
        analytic.push(db);
        let f = |t: &[f64]| {
            let p = MbrmParams { kernel: t[..5].to_vec(), bias: t[5], gamma: 0.2 };
            mbrm_loss(&refs, &p).unwrap().0
        };
        assert_close("mbrm_loss", seed, grad_check(f, &theta, &analytic, GRAD_CHECK_EPS));
    }
}
