//! YOLOv2-style detection head: 1×1 projection of the backbone feature
//! map, anchor-based box decoding, confidence thresholding and greedy
//! non-maximum suppression.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{check_finite, forward, NetworkSpec, Shape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BoundingBox};

pub use crate::geometry::iou;

/// Values per anchor before the class logits: tx, ty, tw, th, objectness.
pub const BOX_PARAMS: usize = 5;

/// Log-scale predictions are clamped to this magnitude before `exp`, which
/// keeps decoded sizes finite and strictly positive.
pub const MAX_LOG_SCALE: f64 = 20.0;

pub const PERSON_CLASS: &str = "person";

/// Anchor priors as (width, height) in input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<(f64, f64)>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Domain("anchor set is empty".into()));
        }
        if let Some(bad) = anchors
            .iter()
            .find(|(w, h)| !(w.is_finite() && h.is_finite() && *w > 0.0 && *h > 0.0))
        {
            return Err(Error::Domain(format!(
                "anchor {bad:?} must have positive size"
            )));
        }
        Ok(Self { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.anchors.iter().copied()
    }

    pub fn get(&self, b: usize) -> (f64, f64) {
        self.anchors[b]
    }
}

impl Default for AnchorSet {
    /// Three tall person-shaped priors for a 224-pixel input.
    fn default() -> Self {
        Self {
            anchors: vec![(24.0, 64.0), (40.0, 104.0), (72.0, 168.0)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub input_size: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            nms_iou_threshold: 0.5,
            input_size: 224,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("confidence_threshold", self.confidence_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.input_size == 0 {
            return Err(Error::Domain("input_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub class_id: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes a raw `(B·(5+C), S, S)` prediction grid.
///
/// Channel `b·(5+C) + k` holds, for anchor `b`: tx, ty, tw, th, objectness,
/// then `C` class logits. Each (cell, anchor) yields at most one detection,
/// labelled with its most probable class and scored
/// `σ(objectness) · softmax(class)`.
pub fn decode(raw: &Tensor, anchors: &AnchorSet, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let shape = raw.shape();
    let per_anchor = per_anchor_channels(shape, anchors)?;
    let num_classes = per_anchor - BOX_PARAMS;
    if shape.height != shape.width {
        return Err(Error::Shape(format!(
            "prediction grid must be square, got {}x{}",
            shape.height, shape.width
        )));
    }
    let grid = shape.height;
    if grid == 0 || !cfg.input_size.is_multiple_of(grid) {
        return Err(Error::Shape(format!(
            "grid size {grid} does not divide input size {}",
            cfg.input_size
        )));
    }
    let stride = (cfg.input_size / grid) as f64;

    let mut out = Vec::new();
    let mut probs = vec![0f64; num_classes];
    for i in 0..grid {
        for j in 0..grid {
            for (b, (anchor_w, anchor_h)) in anchors.iter().enumerate() {
                let at = |k: usize| raw.get(b * per_anchor + k, i, j) as f64;
                softmax_into((0..num_classes).map(|c| at(BOX_PARAMS + c)), &mut probs);
                let (class_id, p) = argmax(&probs);
                let score = sigmoid(at(4)) * p;
                if score < cfg.confidence_threshold {
                    continue;
                }
                let cx = (j as f64 + sigmoid(at(0))) * stride;
                let cy = (i as f64 + sigmoid(at(1))) * stride;
                let w = anchor_w * at(2).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
                let h = anchor_h * at(3).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
                out.push(Detection {
                    bbox: BoundingBox::from_center(cx, cy, w, h),
                    score: score.clamp(0.0, 1.0),
                    class_id,
                });
            }
        }
    }
    Ok(out)
}

fn per_anchor_channels(shape: Shape, anchors: &AnchorSet) -> Result<usize> {
    let b = anchors.len();
    if !shape.channels.is_multiple_of(b) || shape.channels / b <= BOX_PARAMS {
        return Err(Error::Shape(format!(
            "{} prediction channels do not split into {b} anchors of 5 + classes",
            shape.channels
        )));
    }
    Ok(shape.channels / b)
}

fn softmax_into(logits: impl Iterator<Item = f64>, out: &mut [f64]) {
    for (slot, v) in out.iter_mut().zip(logits) {
        *slot = v;
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
}

/// Score descending, then smaller x, then smaller y. Remaining fields only
/// make the order total.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy non-maximum suppression. A box is kept iff its IoU with every
/// already kept box of the same class is below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for det in order {
        let suppressed = kept
            .iter()
            .filter(|k| k.class_id == det.class_id)
            .any(|k| iou_unchecked(&k.bbox, &det.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(*det);
        }
    }
    kept
}

/// The 1×1 convolution mapping backbone features to raw predictions.
/// Weights are laid out `(out_channels, in_channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct YoloHead {
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl YoloHead {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape("head channel counts must be positive".into()));
        }
        if weights.len() != in_channels * out_channels || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "head ({out_channels}, {in_channels}) needs {} weights and {out_channels} biases, got {} and {}",
                in_channels * out_channels,
                weights.len(),
                bias.len()
            )));
        }
        check_finite("head weights", &weights)?;
        check_finite("head bias", &bias)?;
        Ok(Self {
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    /// Head sized for `anchors` × (5 + `num_classes`) outputs with seeded
    /// small random weights.
    pub fn random(in_channels: usize, anchors: usize, num_classes: usize, seed: u64) -> Self {
        let out = anchors * (BOX_PARAMS + num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / in_channels as f32).sqrt();
        let weights = (0..out * in_channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..out).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Self::new(in_channels, out, weights, bias).expect("random head is well formed")
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn apply(&self, feature: &Tensor) -> Result<Tensor> {
        let shape = feature.shape();
        if shape.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "head expects {} feature channels, got {}",
                self.in_channels, shape.channels
            )));
        }
        let plane = shape.plane();
        let mut out = Vec::with_capacity(self.out_channels * plane);
        for oc in 0..self.out_channels {
            let row = &self.weights[oc * self.in_channels..(oc + 1) * self.in_channels];
            let mut acc = vec![0f64; plane];
            for (ic, &w) in row.iter().enumerate() {
                let w = w as f64;
                for (a, &x) in acc.iter_mut().zip(feature.channel(ic)) {
                    *a += w * x as f64;
                }
            }
            let bias = self.bias[oc] as f64;
            out.extend(acc.into_iter().map(|v| (v + bias) as f32));
        }
        Tensor::new(
            Shape::new(self.out_channels, shape.height, shape.width),
            out,
        )
    }
}

/// Backbone, head and decoding parameters bundled for repeated use.
#[derive(Clone, Debug)]
pub struct Detector {
    pub net: NetworkSpec,
    pub head: YoloHead,
    pub anchors: AnchorSet,
    pub config: DecodeConfig,
}

impl Detector {
    pub fn detect(&self, frame: &Tensor) -> Result<Vec<Detection>> {
        detect(frame, &self.net, &self.head, &self.anchors, &self.config)
    }
}

/// forward → head → decode → NMS → clip to the input square.
pub fn detect(
    frame: &Tensor,
    net: &NetworkSpec,
    head: &YoloHead,
    anchors: &AnchorSet,
    cfg: &DecodeConfig,
) -> Result<Vec<Detection>> {
    let features = forward(net, frame)?;
    let raw = head.apply(&features.feature)?;
    let decoded = decode(&raw, anchors, cfg)?;
    let size = cfg.input_size as f64;
    Ok(nms(&decoded, cfg.nms_iou_threshold)
        .into_iter()
        .filter_map(|d| d.bbox.clip(size, size).map(|bbox| Detection { bbox, ..d }))
        .collect())
}
