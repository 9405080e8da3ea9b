//! Naive reference implementations used as test oracles. None of them call
//! into the library beyond plain data types.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use thermoguard_core::engine::{BatchNormParams, ConvLayer, Shape, Tensor};
use thermoguard_core::eval::FrameData;
use thermoguard_core::geometry::BoundingBox;
use thermoguard_core::yolo::Detection;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let data = (0..shape.len())
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_conv(
    rng: &mut ChaCha8Rng,
    in_c: usize,
    out_c: usize,
    stride: usize,
    padding: usize,
) -> ConvLayer {
    let weights = (0..out_c * in_c * 9)
        .map(|_| rng.gen_range(-0.5f32..0.5))
        .collect();
    let bias = (0..out_c).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    ConvLayer::new(in_c, out_c, stride, padding, weights, bias).unwrap()
}

pub fn random_bn(rng: &mut ChaCha8Rng, c: usize) -> BatchNormParams {
    let gamma = (0..c).map(|_| rng.gen_range(0.2f32..1.5)).collect();
    let beta = (0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let mean = (0..c).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let var = (0..c).map(|_| rng.gen_range(0.25f32..2.0)).collect();
    BatchNormParams::new(gamma, beta, mean, var, 1e-5).unwrap()
}

/// Direct six-loop convolution with explicit bounds checks.
pub fn conv_oracle(input: &Tensor, layer: &ConvLayer) -> (Shape, Vec<f64>) {
    let s = input.shape();
    let (stride, pad) = (layer.stride() as i64, layer.padding() as i64);
    let oh = ((s.height as i64 + 2 * pad - 3) / stride + 1) as usize;
    let ow = ((s.width as i64 + 2 * pad - 3) / stride + 1) as usize;
    let mut out = Vec::with_capacity(layer.out_channels() * oh * ow);
    for o in 0..layer.out_channels() {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0f64;
                for i in 0..layer.in_channels() {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = y as i64 * stride + ky as i64 - pad;
                            let ix = x as i64 * stride + kx as i64 - pad;
                            if iy < 0 || ix < 0 || iy >= s.height as i64 || ix >= s.width as i64 {
                                continue;
                            }
                            acc += input.get(i, iy as usize, ix as usize) as f64
                                * layer.weight(o, i, ky, kx) as f64;
                        }
                    }
                }
                out.push(acc + layer.bias()[o] as f64);
            }
        }
    }
    (Shape::new(layer.out_channels(), oh, ow), out)
}

pub fn bn_oracle(input: &Tensor, p: &BatchNormParams) -> Vec<f64> {
    let s = input.shape();
    let mut out = Vec::with_capacity(s.len());
    for c in 0..s.channels {
        let (g, b) = (p.gamma()[c] as f64, p.beta()[c] as f64);
        let (m, v) = (p.running_mean()[c] as f64, p.running_var()[c] as f64);
        let eps = p.epsilon() as f64;
        for y in 0..s.height {
            for x in 0..s.width {
                out.push(g * (input.get(c, y, x) as f64 - m) / (v + eps).sqrt() + b);
            }
        }
    }
    out
}

pub fn pool_oracle(input: &Tensor) -> (Shape, Vec<f32>) {
    let s = input.shape();
    let (oh, ow) = (s.height / 2, s.width / 2);
    let mut out = Vec::new();
    for c in 0..s.channels {
        for y in 0..oh {
            for x in 0..ow {
                let window = [
                    input.get(c, 2 * y, 2 * x),
                    input.get(c, 2 * y, 2 * x + 1),
                    input.get(c, 2 * y + 1, 2 * x),
                    input.get(c, 2 * y + 1, 2 * x + 1),
                ];
                out.push(window.into_iter().fold(f32::NEG_INFINITY, f32::max));
            }
        }
    }
    (Shape::new(s.channels, oh, ow), out)
}

pub fn iou_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar decode straight from the flat channel-major buffer.
pub fn decode_oracle(
    raw: &Tensor,
    anchors: &[(f64, f64)],
    input_size: usize,
    threshold: f64,
) -> Vec<Detection> {
    let s = raw.shape();
    let n = s.height;
    let per = s.channels / anchors.len();
    let classes = per - 5;
    let stride = input_size as f64 / n as f64;
    let data = raw.data();
    let at = |ch: usize, i: usize, j: usize| data[ch * n * n + i * n + j] as f64;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for (b, &(aw, ah)) in anchors.iter().enumerate() {
                let base = b * per;
                let logits: Vec<f64> = (0..classes).map(|c| at(base + 5 + c, i, j)).collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let total: f64 = exps.iter().sum();
                let mut best = 0;
                for c in 1..classes {
                    if exps[c] > exps[best] {
                        best = c;
                    }
                }
                let score = sig(at(base + 4, i, j)) * exps[best] / total;
                if score < threshold {
                    continue;
                }
                let cx = (j as f64 + sig(at(base, i, j))) * stride;
                let cy = (i as f64 + sig(at(base + 1, i, j))) * stride;
                let w = aw * at(base + 2, i, j).clamp(-20.0, 20.0).exp();
                let h = ah * at(base + 3, i, j).clamp(-20.0, 20.0).exp();
                out.push(Detection {
                    bbox: BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h),
                    score,
                    class_id: best,
                });
            }
        }
    }
    out
}

fn rank_key(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then(a.bbox.x.partial_cmp(&b.bbox.x).unwrap())
        .then(a.bbox.y.partial_cmp(&b.bbox.y).unwrap())
        .then(a.bbox.w.partial_cmp(&b.bbox.w).unwrap())
        .then(a.bbox.h.partial_cmp(&b.bbox.h).unwrap())
        .then(a.class_id.cmp(&b.class_id))
}

/// Quadratic suppression: each surviving box strikes out every lower-ranked
/// box of its class that overlaps it at or above the threshold.
pub fn nms_oracle(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_key);
    let mut alive = vec![true; sorted.len()];
    let mut kept = Vec::new();
    for i in 0..sorted.len() {
        if !alive[i] {
            continue;
        }
        kept.push(sorted[i]);
        for j in i + 1..sorted.len() {
            if sorted[j].class_id == sorted[i].class_id
                && iou_oracle(&sorted[i].bbox, &sorted[j].bbox) >= threshold
            {
                alive[j] = false;
            }
        }
    }
    kept
}

/// (tp, fp, fn) from greedy matching in rank order.
pub fn match_oracle(
    dets: &[Detection],
    gts: &[BoundingBox],
    iou_min: f64,
) -> (usize, usize, usize) {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_key);
    let mut used = vec![false; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for d in &sorted {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let v = iou_oracle(&d.bbox, gt);
            if v >= iou_min && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                used[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
    }
    (tp, fp, gts.len() - tp)
}

/// Re-matches every frame from scratch at every distinct score threshold,
/// then integrates the monotone precision envelope over recall.
pub fn ap_oracle(frames: &[FrameData], iou_min: f64) -> f64 {
    let total_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    let mut thresholds: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.detections.iter().map(|d| d.score))
        .collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut curve = Vec::new();
    for &t in &thresholds {
        let (mut tp, mut fp) = (0, 0);
        for f in frames {
            let kept: Vec<Detection> = f
                .detections
                .iter()
                .filter(|d| d.score >= t)
                .copied()
                .collect();
            let (a, b, _) = match_oracle(&kept, &f.ground_truth, iou_min);
            tp += a;
            fp += b;
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for k in 0..curve.len() {
        let best_p = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
        ap += (curve[k].0 - prev) * best_p;
        prev = curve[k].0;
    }
    ap
}

pub fn miss_rate_oracle(frames: &[FrameData], iou_min: f64, score_threshold: f64) -> f64 {
    let (mut tp, mut fn_) = (0, 0);
    for f in frames {
        let kept: Vec<Detection> = f
            .detections
            .iter()
            .filter(|d| d.score >= score_threshold)
            .copied()
            .collect();
        let (a, _, c) = match_oracle(&kept, &f.ground_truth, iou_min);
        tp += a;
        fn_ += c;
    }
    fn_ as f64 / (tp + fn_) as f64
}

/// Ground truth perturbed into detections: about 10% of boxes dropped,
/// survivors jittered by up to 5% of their size, and about 10% spurious
/// boxes added.
pub fn synthetic_dataset(rng: &mut ChaCha8Rng, frames: usize) -> Vec<FrameData> {
    (0..frames)
        .map(|k| {
            let n = rng.gen_range(1..=6);
            let ground_truth: Vec<BoundingBox> = (0..n)
                .map(|_| {
                    BoundingBox::new(
                        rng.gen_range(0.0..400.0),
                        rng.gen_range(0.0..300.0),
                        rng.gen_range(20.0..80.0),
                        rng.gen_range(40.0..160.0),
                    )
                })
                .collect();
            let mut detections = Vec::new();
            for gt in &ground_truth {
                if rng.gen_bool(0.1) {
                    continue;
                }
                let j = |rng: &mut ChaCha8Rng, s: f64| rng.gen_range(-0.05..=0.05) * s;
                let bbox = BoundingBox::new(
                    gt.x + j(rng, gt.w),
                    gt.y + j(rng, gt.h),
                    gt.w + j(rng, gt.w),
                    gt.h + j(rng, gt.h),
                );
                detections.push(Detection {
                    bbox,
                    score: rng.gen_range(0.3..1.0),
                    class_id: 0,
                });
            }
            for _ in 0..n {
                if rng.gen_bool(0.1) {
                    let bbox = BoundingBox::new(
                        rng.gen_range(0.0..400.0),
                        rng.gen_range(0.0..300.0),
                        rng.gen_range(20.0..80.0),
                        rng.gen_range(40.0..160.0),
                    );
                    detections.push(Detection {
                        bbox,
                        score: rng.gen_range(0.0..0.9),
                        class_id: 0,
                    });
                }
            }
            FrameData {
                frame_id: format!("s{k:03}"),
                detections,
                ground_truth,
            }
        })
        .collect()
}

/// Boxes on an integer lattice with coarse scores, so exact duplicates and
/// score ties occur often.
pub fn random_detections(rng: &mut ChaCha8Rng, max: usize, classes: usize) -> Vec<Detection> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| Detection {
            bbox: BoundingBox::new(
                rng.gen_range(0..40) as f64,
                rng.gen_range(0..40) as f64,
                rng.gen_range(1..20) as f64,
                rng.gen_range(1..20) as f64,
            ),
            score: rng.gen_range(1..=20) as f64 / 20.0,
            class_id: rng.gen_range(0..classes),
        })
        .collect()
}
