//! Acceptance criteria 1–9. Runs every criterion, prints one PASS/FAIL line
//! each and exits non-zero when any fails.
//!
//! `TWOSTREAM_ACCEPT=3,5` restricts the run to the listed criteria.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twostream::config::RunConfig;
use twostream::corr_crop::{
    correlate, correlate_logits, correlate_logits_backward, expand_box, mask_training_loss, pixel_roles, MaskLossConfig,
    MaskObject, PixelRole, INFER_EXPAND_RATIO, TRAIN_EXPAND_RATIO,
};
use twostream::datagen::{generate_scenes, min_enclosing_box, BinaryMask, Instance, SceneConfig, SceneSample};
use twostream::mbrm::{
    boundary_posterior, boundary_prior, boundary_profile, mbrm_loss, refine_box, train_mbrm, Axis, MbrmParams, MbrmSample,
    MbrmTrainConfig, RefineStatus,
};
use twostream::model::{nms, Candidate, Network};
use twostream::numerics::*;
use twostream::pipeline::{
    boundary_error, collect_mbrm_samples, evaluate, infer_all, train, train_step, BoxSource,
    DetectionResult, EvalDet, EvalGt, IouType, TrainConfig,
};
use twostream::pipeline::eval::{average_precision, AreaRange};
use twostream::BBox;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    let mut note = |e: f64, what: &'static str| {
        if e > worst.0 || !e.is_finite() {
            worst = (e, what);
        }
    };
    for seed in 0..5u64 {
        let mut r = rng(seed);
        // conv2d, both strides and kernel sizes
        for (k, stride) in [(1, 1), (3, 1), (3, 2)] {
            let (ci, co, h, w) = (2, 3, 6, 5);
            let x = uniform(&mut r, ci * h * w, 1.0);
            let wt = uniform(&mut r, co * ci * k * k, 1.0);
            let b = uniform(&mut r, co, 1.0);
            let fwd = |x: &[f64], wt: &[f64], b: &[f64]| {
                conv2d(&t64(&[ci, h, w], x), &t64(&[co, ci, k, k], wt), Some(&t64(&[co], b)), stride).unwrap()
            };
            let out = fwd(&x, &wt, &b);
            let up = uniform(&mut r, out.len(), 1.0);
            let g = conv2d_backward(&t64(&[ci, h, w], &x), &t64(&[co, ci, k, k], &wt), stride, &t64(out.shape(), &up)).unwrap();
            note(grad_check(|v| dot(fwd(v, &wt, &b).data(), &up), &x, g.input.data(), GRAD_CHECK_EPS), "conv2d input");
            note(grad_check(|v| dot(fwd(&x, v, &b).data(), &up), &wt, g.weight.data(), GRAD_CHECK_EPS), "conv2d weight");
            note(grad_check(|v| dot(fwd(&x, &wt, v).data(), &up), &b, g.bias.data(), GRAD_CHECK_EPS), "conv2d bias");
        }
        // conv1d
        let s = uniform(&mut r, 15, 1.0);
        let kern = uniform(&mut r, 9, 1.0);
        let up = uniform(&mut r, 15, 1.0);
        let (ds, dk) = conv1d_backward(&s, &kern, &up).unwrap();
        note(grad_check(|v| dot(&conv1d(v, &kern).unwrap(), &up), &s, &ds, GRAD_CHECK_EPS), "conv1d signal");
        note(grad_check(|v| dot(&conv1d(&s, v).unwrap(), &up), &kern, &dk, GRAD_CHECK_EPS), "conv1d kernel");
        // relu (inputs kept off the kink), sigmoid, softmax
        let x: Vec<f64> = uniform(&mut r, 16, 1.0).into_iter().map(|v| if v.abs() < 0.05 { 0.3 } else { v }).collect();
        let up = uniform(&mut r, 16, 1.0);
        let mut g = t64(&[16], &up);
        relu_backward(&relu(&t64(&[16], &x)), &mut g);
        note(grad_check(|v| dot(relu(&t64(&[16], v)).data(), &up), &x, g.data(), GRAD_CHECK_EPS), "relu");
        let g = sigmoid_backward(&sigmoid_map(&t64(&[16], &x)), &t64(&[16], &up));
        note(grad_check(|v| dot(sigmoid_map(&t64(&[16], v)).data(), &up), &x, g.data(), GRAD_CHECK_EPS), "sigmoid");
        let g = softmax_channels_backward(&softmax_channels(&t64(&[2, 2, 4], &x)).unwrap(), &t64(&[2, 2, 4], &up)).unwrap();
        note(
            grad_check(|v| dot(softmax_channels(&t64(&[2, 2, 4], v)).unwrap().data(), &up), &x, g.data(), GRAD_CHECK_EPS),
            "softmax",
        );
        // bilinear upsampling
        let m = uniform(&mut r, 2 * 3 * 4, 1.0);
        let up = uniform(&mut r, 2 * 12 * 15, 1.0);
        let g = bilinear_upsample_backward(&[2, 3, 4], &t64(&[2, 12, 15], &up)).unwrap();
        note(
            grad_check(|v| dot(bilinear_upsample(&t64(&[2, 3, 4], v), 12, 15).unwrap().data(), &up), &m, g.data(), GRAD_CHECK_EPS),
            "bilinear_upsample",
        );
        // losses
        let p: Vec<f64> = (0..12).map(|_| r.random_range(0.05..0.95)).collect();
        let tgt: Vec<f64> = (0..12).map(|_| r.random_range(0..2) as f64).collect();
        let wt: Vec<f64> = (0..12).map(|_| r.random_range(0..2) as f64 + 0.5).collect();
        let g = pixel_cross_entropy_backward(&p, &tgt, &wt).unwrap();
        note(grad_check(|v| pixel_cross_entropy(v, &tgt, &wt).unwrap().loss, &p, &g, GRAD_CHECK_EPS), "pixel CE");
        let logits = uniform(&mut r, 5 * 3, 3.0);
        let targets = [
            FocalTarget::Positive(1),
            FocalTarget::Negative,
            FocalTarget::Ignore,
            FocalTarget::Positive(2),
            FocalTarget::Negative,
        ];
        let (_, g) = focal_loss(&logits, &targets, 3, 0.25, 2.0).unwrap();
        note(grad_check(|v| focal_loss(v, &targets, 3, 0.25, 2.0).unwrap().0, &logits, &g, GRAD_CHECK_EPS), "focal");
        let pred = uniform(&mut r, 8, 3.0);
        let target = uniform(&mut r, 8, 1.0);
        let (_, g) = smooth_l1(&pred, &target);
        note(grad_check(|v| smooth_l1(v, &target).0, &pred, &g, GRAD_CHECK_EPS), "smooth L1");
        // correlation and the mask loss through it
        let (d, h, w) = (3, 8, 8);
        let pix = uniform(&mut r, d * h * w, 1.0);
        let obj = uniform(&mut r, 2 * d, 1.0);
        let up = uniform(&mut r, 2 * h * w, 1.0);
        let (dp, dobj) = correlate_logits_backward(&t64(&[d, h, w], &pix), &t64(&[2, d], &obj), &t64(&[2, h, w], &up)).unwrap();
        let cl = |p: &[f64], o: &[f64]| dot(correlate_logits(&t64(&[d, h, w], p), &t64(&[2, d], o)).unwrap().data(), &up);
        note(grad_check(|v| cl(v, &obj), &pix, dp.data(), GRAD_CHECK_EPS), "correlate pixel");
        note(grad_check(|v| cl(&pix, v), &obj, dobj.data(), GRAD_CHECK_EPS), "correlate object");
        let gt = BinaryMask::from_fn(w, h, |c, row| (2..6).contains(&c) && (1..5).contains(&row));
        let gt_box = BBox::new(2.0, 1.0, 4.0, 4.0);
        let ml = |p: &[f64], o: &[f64]| {
            let probs = correlate(&t64(&[d, h, w], p), &t64(&[2, d], o)).unwrap();
            mask_training_loss(&[MaskObject { probs: &probs, gt_mask: &gt, gt_box }], &MaskLossConfig::default()).unwrap()
        };
        let lg = ml(&pix, &obj).logit_grads[0].clone().unwrap();
        let (dp, dobj) = correlate_logits_backward(&t64(&[d, h, w], &pix), &t64(&[2, d], &obj), &lg).unwrap();
        note(grad_check(|v| ml(v, &obj).loss, &pix, dp.data(), GRAD_CHECK_EPS), "mask loss pixel");
        note(grad_check(|v| ml(&pix, v).loss, &obj, dobj.data(), GRAD_CHECK_EPS), "mask loss object");
        // MBRM posterior cross entropy
        let n = 24;
        let sample = MbrmSample {
            profile_x: (0..n).map(|i| if (6..17).contains(&i) { 0.9 } else { r.random_range(0.0..0.2) }).collect(),
            profile_y: (0..n).map(|_| r.random_range(0.0..1.0)).collect(),
            gt: BBox::new(6.0, 4.0, 11.0, 12.0),
            regressed: BBox::new(7.5, 5.0, 9.0, 10.5),
        };
        let mut theta = uniform(&mut r, 7, 1.0);
        theta[6] *= 0.5;
        let mk = |t: &[f64]| MbrmParams { kernel: t[..5].to_vec(), bias: t[5], gamma: 0.3 * (1.0 + t[6].abs()) };
        let params = mk(&theta);
        let (_, dk, db) = mbrm_loss(&[&sample], &params).unwrap();
        let mut analytic = dk;
        analytic.push(db);
        note(
            grad_check(|v| mbrm_loss(&[&sample], &MbrmParams { kernel: v[..5].to_vec(), bias: v[5], gamma: params.gamma }).unwrap().0, &theta[..6], &analytic, GRAD_CHECK_EPS),
            "mbrm loss",
        );
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 <= 1e-4 && secs < 120.0,
        format!("max relative error {:.2e} ({}) over 5 seeds, {secs:.1}s", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = r.random_range(1..6);
        let (h, w) = (r.random_range(1..6), r.random_range(1..6));
        let pix = Tensor::<f32>::from_fn(&[d, h, w], |_| r.random_range(-4.0..4.0));
        let obj = Tensor::<f32>::from_fn(&[2, d], |_| r.random_range(-4.0..4.0));
        let p = correlate(&pix, &obj).unwrap();
        for i in 0..h * w {
            worst = worst.max((p.data()[i] as f64 + p.data()[h * w + i] as f64 - 1.0).abs());
        }
        let n = r.random_range(1..40);
        let mu = r.random_range(-5.0..n as f64 + 5.0);
        let prior = boundary_prior(mu, r.random_range(1.0..60.0), r.random_range(0.0..0.3), n).unwrap();
        worst = worst.max((prior.iter().sum::<f64>() - 1.0).abs());
        let lik: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let post = boundary_posterior(&prior, &lik).unwrap();
        worst = worst.max((post.posterior.iter().sum::<f64>() - 1.0).abs());
    }
    check(worst <= 1e-6, format!("max |Σ−1| = {worst:.2e} over 1000 cases"))
}

// ---------------------------------------------------------------- criterion 3

fn brute_nms(c: &[Candidate], thr: f64) -> Vec<usize> {
    // repeatedly take the best remaining candidate, drop what it suppresses
    let mut alive: Vec<usize> = (0..c.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let best = *alive
            .iter()
            .max_by(|&&a, &&b| c[a].score.partial_cmp(&c[b].score).unwrap().then(c[b].anchor_index.cmp(&c[a].anchor_index)))
            .unwrap();
        kept.push(best);
        alive.retain(|&i| i != best && !(c[i].class_id == c[best].class_id && c[i].bbox.iou(&c[best].bbox) > thr));
    }
    kept
}

fn random_box(r: &mut ChaCha8Rng, size: f64) -> BBox {
    let x = r.random_range(0.0..size * 0.7);
    let y = r.random_range(0.0..size * 0.7);
    BBox::new(x, y, r.random_range(2.0..size * 0.4), r.random_range(2.0..size * 0.4))
}

/// AP at one threshold for a single image with distinct scores: greedy
/// best-IoU matching, then max precision at recall ≥ each of 101 points.
fn brute_ap(dets: &[(usize, f64, BBox)], gts: &[(usize, BBox)], thr: f64) -> Option<f64> {
    let mut classes: Vec<usize> = gts.iter().map(|g| g.0).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return None;
    }
    let mut aps = Vec::new();
    for c in classes {
        let mut ds: Vec<&(usize, f64, BBox)> = dets.iter().filter(|d| d.0 == c).collect();
        ds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let gs: Vec<&BBox> = gts.iter().filter(|g| g.0 == c).map(|g| &g.1).collect();
        let mut used = vec![false; gs.len()];
        let mut pts = Vec::new();
        let mut tp = 0;
        for (i, d) in ds.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gs.iter().enumerate() {
                let v = d.2.iou(g);
                if !used[j] && v >= thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
                tp += 1;
            }
            pts.push((tp as f64 / gs.len() as f64, tp as f64 / (i + 1) as f64));
        }
        let sum: f64 = (0..=100)
            .map(|k| {
                let rt = k as f64 / 100.0;
                pts.iter().filter(|p| p.0 >= rt).map(|p| p.1).fold(0.0, f64::max)
            })
            .sum();
        aps.push(sum / 101.0);
    }
    Some(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut failures = Vec::new();
    for trial in 0..200 {
        // NMS
        let cands: Vec<Candidate> = (0..20)
            .map(|i| Candidate {
                bbox: random_box(&mut r, 40.0),
                score: (r.random_range(0..8) as f64) / 8.0,
                class_id: r.random_range(0..2),
                anchor_index: i,
            })
            .collect();
        let got: Vec<usize> = nms(&cands, 0.5).iter().map(|c| c.anchor_index).collect();
        if got != brute_nms(&cands, 0.5) {
            failures.push(format!("nms trial {trial}"));
        }
        // AP
        let gts: Vec<(usize, BBox)> = (0..r.random_range(1..5)).map(|_| (r.random_range(0..2), random_box(&mut r, 60.0))).collect();
        let mut dets: Vec<(usize, f64, BBox)> = Vec::new();
        for g in &gts {
            if r.random_bool(0.7) {
                let b = g.1;
                dets.push((g.0, 0.0, BBox::new(b.x + r.random_range(-3.0..3.0), b.y + r.random_range(-3.0..3.0), b.w, b.h)));
            }
        }
        for _ in 0..r.random_range(0..4) {
            let c = r.random_range(0..2);
            dets.push((c, 0.0, random_box(&mut r, 60.0)));
        }
        let mut scores: Vec<f64> = (0..dets.len()).map(|i| (i as f64 + 1.0) / (dets.len() as f64 + 1.0)).collect();
        for i in (1..scores.len()).rev() {
            scores.swap(i, r.random_range(0..=i));
        }
        for (d, s) in dets.iter_mut().zip(scores) {
            d.1 = s;
        }
        let empty = BinaryMask::zeros(1, 1);
        let ed: Vec<EvalDet<'_>> = dets.iter().map(|d| EvalDet { image_id: 0, class_id: d.0, score: d.1, bbox: d.2, mask: &empty }).collect();
        let eg: Vec<EvalGt<'_>> = gts.iter().map(|g| EvalGt { image_id: 0, class_id: g.0, bbox: g.1, mask: &empty }).collect();
        for thr in [0.5, 0.75] {
            let a = average_precision(&ed, &eg, IouType::Box, thr, AreaRange::All);
            let b = brute_ap(&dets, &gts, thr);
            if a.zip(b).is_none_or(|(a, b)| (a - b).abs() > 1e-9) && a != b {
                failures.push(format!("ap trial {trial} thr {thr}: {a:?} vs {b:?}"));
            }
        }
        // min enclosing box and boundary profile
        let (w, h) = (r.random_range(1..12), r.random_range(1..12));
        let soft: Vec<f32> = (0..w * h).map(|_| if r.random_bool(0.2) { r.random_range(0.0..1.0) } else { 0.0 }).collect();
        let mask = BinaryMask::from_fn(w, h, |c, row| soft[row * w + c] > 0.0);
        let brute_box = {
            let pts: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| soft[y * w + x] > 0.0).collect();
            (!pts.is_empty()).then(|| {
                let x0 = pts.iter().map(|p| p.0).min().unwrap();
                let x1 = pts.iter().map(|p| p.0).max().unwrap();
                let y0 = pts.iter().map(|p| p.1).min().unwrap();
                let y1 = pts.iter().map(|p| p.1).max().unwrap();
                BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64)
            })
        };
        if min_enclosing_box(&mask).ok() != brute_box {
            failures.push(format!("min_enclosing_box trial {trial}"));
        }
        let px = boundary_profile(&soft, w, h, Axis::Horizontal).unwrap();
        let py = boundary_profile(&soft, w, h, Axis::Vertical).unwrap();
        let bx: Vec<f64> = (0..w).map(|x| (0..h).map(|y| soft[y * w + x] as f64).fold(f64::MIN, f64::max)).collect();
        let by: Vec<f64> = (0..h).map(|y| (0..w).map(|x| soft[y * w + x] as f64).fold(f64::MIN, f64::max)).collect();
        if px != bx || py != by {
            failures.push(format!("boundary_profile trial {trial}"));
        }
        // posterior vs brute-force Bayes
        let n = 16;
        let prior: Vec<f64> = {
            let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / z).collect()
        };
        let lik: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let post = boundary_posterior(&prior, &lik).unwrap();
        let z: f64 = (0..n).map(|i| prior[i] * lik[i]).sum();
        if (0..n).any(|i| (post.posterior[i] - prior[i] * lik[i] / z).abs() > 1e-9) {
            failures.push(format!("boundary_posterior trial {trial}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "nms, AP, min-enclosing box, profile and posterior match brute force on 200 trials each".into()
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (w, h) = (r.random_range(8..64), r.random_range(8..64));
        let mask: Vec<f32> = (0..w * h).map(|_| r.random_range(0.0..1.0)).collect();
        let b = BBox::new(r.random_range(-4.0..w as f64), r.random_range(-4.0..h as f64), r.random_range(0.5..30.0), r.random_range(0.5..30.0));
        let params = MbrmParams { kernel: uniform(&mut r, 9, 5.0), bias: r.random_range(-2.0..2.0), gamma: 0.0 };
        let out = refine_box(&b, &mask, w, h, &params).unwrap();
        if out.bbox != b || out.status != RefineStatus::Bypassed {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches}/100 boxes changed with γ=0"))
}

// ---------------------------------------------------------------- criterion 5

const MBRM_SIZE: usize = 128;

/// A sharp rectangular or elliptical mask and a regressed box with every side
/// jittered by up to ±4 px.
fn jittered_case(r: &mut ChaCha8Rng) -> (Vec<f32>, BBox, BBox) {
    let w = r.random_range(24..=64);
    let h = r.random_range(24..=64);
    let x0 = r.random_range(6..MBRM_SIZE - w - 6);
    let y0 = r.random_range(6..MBRM_SIZE - h - 6);
    let ellipse = r.random_bool(0.5);
    let mask = BinaryMask::from_fn(MBRM_SIZE, MBRM_SIZE, |c, row| {
        let inside = (x0..x0 + w).contains(&c) && (y0..y0 + h).contains(&row);
        if !ellipse {
            return inside;
        }
        let (cx, cy) = (x0 as f64 + (w as f64 - 1.0) / 2.0, y0 as f64 + (h as f64 - 1.0) / 2.0);
        let (dx, dy) = ((c as f64 - cx) / (w as f64 / 2.0), (row as f64 - cy) / (h as f64 / 2.0));
        dx * dx + dy * dy <= 1.0
    });
    let gt = min_enclosing_box(&mask).unwrap();
    let mut j = || r.random_range(-4..=4) as f64;
    let (l, t, rr, b) = (gt.x + j(), gt.y + j(), gt.right() + j(), gt.bottom() + j());
    let soft: Vec<f32> = mask.data.iter().map(|&v| v as f32).collect();
    (soft, gt, BBox::from_corners(l, t, rr, b))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let train_set: Vec<MbrmSample> = (0..300)
        .map(|_| {
            let (m, gt, reg) = jittered_case(&mut r);
            MbrmSample::from_mask(&m, MBRM_SIZE, MBRM_SIZE, gt, reg).unwrap()
        })
        .collect();
    let held_out: Vec<(Vec<f32>, BBox, BBox)> = (0..100).map(|_| jittered_case(&mut r)).collect();
    let init = MbrmParams::zeros(4, 0.05);
    let trained = train_mbrm(&train_set, &init, &MbrmTrainConfig::default()).map_err(|e| e.to_string())?;
    let (mut prior_err, mut zero_err, mut trained_err) = (0.0, 0.0, 0.0);
    let mut zero_equals_prior = true;
    for (m, gt, reg) in &held_out {
        let z = refine_box(reg, m, MBRM_SIZE, MBRM_SIZE, &init).unwrap().bbox;
        let t = refine_box(reg, m, MBRM_SIZE, MBRM_SIZE, &trained.params).unwrap().bbox;
        let pe = boundary_error(reg, gt);
        zero_equals_prior &= (boundary_error(&z, gt) - pe).abs() < 1e-9;
        prior_err += pe;
        zero_err += boundary_error(&z, gt);
        trained_err += boundary_error(&t, gt);
    }
    let n = held_out.len() as f64;
    let (prior_err, zero_err, trained_err) = (prior_err / n, zero_err / n, trained_err / n);
    let secs = start.elapsed().as_secs_f64();
    check(
        trained_err <= 1.0 && zero_equals_prior && secs < 300.0,
        format!("held-out boundary error: trained {trained_err:.3} px, zero kernel {zero_err:.3} px, prior {prior_err:.3} px ({secs:.0}s)"),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let scene = SceneConfig { image_size: 128, ..cfg.scene.clone() };
    let train_set = generate_scenes(1, 500, &scene).map_err(|e| e.to_string())?;
    let test_set = generate_scenes(2, 100, &scene).map_err(|e| e.to_string())?;
    let mut store = ParamStore::new();
    let net = Network::new(cfg.model.clone(), &mut store, cfg.init_seed).map_err(|e| e.to_string())?;
    let tc = TrainConfig { iterations: 2000, ..cfg.train.clone() };
    let mut last = 0.0;
    train(&net, &mut store, &train_set, &tc, 0, |it, lb, _| {
        last = lb.total;
        if it % 250 == 0 {
            eprintln!("  [6] iteration {it}: loss {:.4} (cls {:.4} reg {:.4} mask {:.4})", lb.total, lb.cls, lb.reg, lb.mask);
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let samples = collect_mbrm_samples(&net, &store, &train_set, &cfg.infer).map_err(|e| e.to_string())?;
    let mbrm = train_mbrm(&samples, &cfg.mbrm_params(), &cfg.mbrm_train).map_err(|e| e.to_string())?;
    let results = infer_all(&net, &store, &test_set, &mbrm.params, &cfg.infer).map_err(|e| e.to_string())?;
    let images: Vec<(u64, &[DetectionResult], &[Instance])> =
        results.iter().zip(&test_set).enumerate().map(|(i, (d, s))| (i as u64, d.as_slice(), s.instances.as_slice())).collect();
    let report = evaluate(&images, BoxSource::Refined);
    let b = report.boundary_error;
    let secs = start.elapsed().as_secs_f64();
    let a = report.mean_mask_iou >= 0.7;
    let bb = b.all.matched > 0 && b.all.refined < b.all.regressed;
    let c = b.small.matched > 0 && b.small.direct > b.small.refined;
    check(
        a && bb && c && secs < 1800.0,
        format!(
            "(a) mask IoU {:.3} over {} matched [{}]; (b) boundary error refined {:.3} vs regressed {:.3} [{}]; \
             (c) small objects ({}) direct {:.3} vs MBRM {:.3} [{}]; box AP {:.3}, mask AP {:.3}; final loss {last:.3}; {secs:.0}s",
            report.mean_mask_iou,
            report.matched,
            if a { "ok" } else { "fail" },
            b.all.refined,
            b.all.regressed,
            if bb { "ok" } else { "fail" },
            b.small.matched,
            b.small.direct,
            b.small.refined,
            if c { "ok" } else { "fail" },
            report.bbox.ap,
            report.mask.ap,
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut problems = Vec::new();
    for _ in 0..200 {
        let b = BBox::new(r.random_range(-10.0..120.0), r.random_range(-10.0..120.0), r.random_range(1.0..60.0), r.random_range(1.0..60.0));
        for ratio in [TRAIN_EXPAND_RATIO, INFER_EXPAND_RATIO] {
            let (cx, cy) = b.center();
            let (ew, eh) = (b.w * ratio, b.h * ratio);
            let (x0, y0) = ((cx - ew / 2.0).max(0.0), (cy - eh / 2.0).max(0.0));
            let (x1, y1) = ((cx + ew / 2.0).min(128.0), (cy + eh / 2.0).min(128.0));
            let want = BBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0));
            let got = expand_box(&b, ratio, (128.0, 128.0)).unwrap();
            let eq = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
            if !(eq(got.bbox.x, want.x) && eq(got.bbox.y, want.y) && eq(got.bbox.w, want.w) && eq(got.bbox.h, want.h)) {
                problems.push(format!("expand {b:?} × {ratio}: {:?} vs {want:?}", got.bbox));
            }
        }
    }
    if (TRAIN_EXPAND_RATIO, INFER_EXPAND_RATIO) != (1.5, 1.2) {
        problems.push("expansion constants differ from 1.5 / 1.2".into());
    }
    // OHEM: 1:1 when enough background exists, all background otherwise
    let cfg = MaskLossConfig::default();
    for _ in 0..200 {
        let (w, h) = (r.random_range(6..20), r.random_range(6..20));
        let fg: Vec<f32> = (0..w * h).map(|_| r.random_range(0.0..1.0)).collect();
        let bw = r.random_range(1..w);
        let bh = r.random_range(1..h);
        let (x0, y0) = (r.random_range(0..=w - bw), r.random_range(0..=h - bh));
        let gt = BinaryMask::from_fn(w, h, |c, row| (x0..x0 + bw).contains(&c) && (y0..y0 + bh).contains(&row) && r_hash(c, row));
        if gt.is_empty() {
            continue;
        }
        let gt_box = min_enclosing_box(&gt).unwrap();
        let roles = pixel_roles(&fg, &gt, &gt_box, &cfg).unwrap();
        let n_fg = roles.iter().filter(|&&x| x == PixelRole::Foreground).count();
        let n_hard = roles.iter().filter(|&&x| x == PixelRole::HardBackground).count();
        let n_bg = n_hard + roles.iter().filter(|&&x| x == PixelRole::EasyBackground).count();
        if n_hard != n_fg.min(n_bg) {
            problems.push(format!("ohem picked {n_hard} bg for {n_fg} fg ({n_bg} available)"));
        }
        // the hard ones are the highest-probability background pixels
        let min_hard = (0..w * h).filter(|&i| roles[i] == PixelRole::HardBackground).map(|i| fg[i]).fold(f32::MAX, f32::min);
        let max_easy = (0..w * h).filter(|&i| roles[i] == PixelRole::EasyBackground).map(|i| fg[i]).fold(f32::MIN, f32::max);
        if n_hard > 0 && max_easy > min_hard {
            problems.push("ohem kept an easier background pixel over a harder one".into());
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "expansion 1.5/1.2 matches closed-form scaling; OHEM bg:fg = 1:1 (or all bg when scarce)".into()
        } else {
            format!("{} problems, first: {}", problems.len(), problems[0])
        },
    )
}

fn r_hash(c: usize, r: usize) -> bool {
    (c * 31 + r * 17) % 5 != 0
}

// ---------------------------------------------------------------- criterion 8

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_twostream"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("twostream {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline_run(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (data, run, res) = (dir.join("data"), dir.join("run"), dir.join("results"));
    let cfg = dir.join("small.txt");
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    std::fs::write(
        &cfg,
        "image_size = 64\nbackbone_width = 16\nhead_width = 16\npixel_hidden = 32\nrepr_dim = 8\n\
         batch_size = 2\nwarmup = 5\nlr_milestones = 30\ncheckpoint_every = 20\nmbrm_iterations = 50\nscore_threshold = 0.0\n",
    )
    .map_err(|e| e.to_string())?;
    run_cli(&["gen-data", "--seed", "9", "--count", "6", "--out", &s(&data), "--config", &s(&cfg)])?;
    run_cli(&["train", "--dataset", &s(&data), "--out", &s(&run), "--iterations", "40", "--seed", "3", "--config", &s(&cfg)])?;
    let ckpt = run.join("model.ckpt");
    run_cli(&["train-mbrm", "--checkpoint", &s(&ckpt), "--dataset", &s(&data)])?;
    run_cli(&["infer", "--checkpoint", &s(&ckpt), "--dataset", &s(&data), "--out", &s(&res)])?;
    run_cli(&["eval", "--results", &s(&res.join("results.json")), "--dataset", &s(&data), "--out", &s(&res)])?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok((read(&ckpt)?, read(&res.join("results.json"))?))
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline_run(&tmp.path().join("a"))?;
    let b = pipeline_run(&tmp.path().join("b"))?;
    check(
        a.0 == b.0 && a.1 == b.1,
        format!(
            "checkpoints {} ({} bytes), results {} ({} bytes)",
            if a.0 == b.0 { "identical" } else { "differ" },
            a.0.len(),
            if a.1 == b.1 { "identical" } else { "differ" },
            a.1.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let cfg = RunConfig::default();
    let batch: Vec<SceneSample> = generate_scenes(9, 4, &cfg.scene).map_err(|e| e.to_string())?;
    let mut store = ParamStore::new();
    let net = Network::new(cfg.model.clone(), &mut store, cfg.init_seed).map_err(|e| e.to_string())?;
    let tc = TrainConfig { flip: false, ..cfg.train.clone() };
    let mut first = None;
    let mut last = 0.0;
    for step in 0..500u64 {
        let lb = train_step(&net, &mut store, &batch, &tc, tc.lr_at(step)).map_err(|e| e.to_string())?;
        first.get_or_insert(lb.total);
        last = lb.total;
    }
    let first = first.unwrap();
    check(last < 0.1 * first, format!("total loss {first:.4} → {last:.4} ({:.1}%) after 500 steps", 100.0 * last / first))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("TWOSTREAM_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", criterion_1),
        (2, "normalization invariants", criterion_2),
        (3, "oracle equivalence", criterion_3),
        (4, "γ=0 bypass", criterion_4),
        (5, "MBRM recovery", criterion_5),
        (6, "end-to-end toy run", criterion_6),
        (7, "cropping arithmetic and OHEM", criterion_7),
        (8, "determinism", criterion_8),
        (9, "overfit smoke", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("criterion {n} ({name}): PASS — {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL — {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
