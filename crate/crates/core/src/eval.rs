//! Detection scoring against ground truth: greedy IoU matching, all-points
//! interpolated average precision at a single IoU threshold, miss rate, and
//! the seeded train/validation/test split.
//!
//! Miss rate here is the plain `FN / (TP + FN)` at one score threshold, not
//! the log-average miss rate over false positives per image.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BoundingBox};
use crate::yolo::{detection_order, Detection};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedPair {
    pub det_index: usize,
    pub gt_index: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matched_pairs: Vec<MatchedPair>,
}

impl MatchResult {
    pub fn counts(&self) -> Counts {
        Counts {
            true_positives: self.true_positives,
            false_positives: self.false_positives,
            false_negatives: self.false_negatives,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.true_positives += rhs.true_positives;
        self.false_positives += rhs.false_positives;
        self.false_negatives += rhs.false_negatives;
    }
}

/// Greedy matching in detection order (score descending, ties by smaller
/// x then y). Each detection takes the unmatched ground-truth box with the
/// highest IoU ≥ `iou_min` (lowest index on ties), or counts as a false
/// positive.
pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], iou_min: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| detection_order(&dets[a], &dets[b]).then(a.cmp(&b)));

    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for det_index in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, iou_unchecked(&dets[det_index].bbox, gt)))
            .filter(|&(_, v)| v >= iou_min)
            .fold(None, |best: Option<(usize, f64)>, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        match best {
            Some((gt_index, iou)) => {
                taken[gt_index] = true;
                result.matched_pairs.push(MatchedPair {
                    det_index,
                    gt_index,
                    iou,
                });
            }
            None => result.false_positives += 1,
        }
    }
    result.true_positives = result.matched_pairs.len();
    result.false_negatives = gts.len() - result.true_positives;
    result
}

pub fn miss_rate(result: &MatchResult) -> Result<f64> {
    miss_rate_from_counts(&result.counts())
}

pub fn miss_rate_from_counts(counts: &Counts) -> Result<f64> {
    let positives = counts.true_positives + counts.false_negatives;
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "miss rate needs at least one ground-truth box".into(),
        ));
    }
    Ok(counts.false_negatives as f64 / positives as f64)
}

/// Detections and labels of one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameData {
    pub frame_id: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    /// Lowest detection score admitted at this point.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One precision/recall point per distinct detection score, highest score
/// first.
pub fn pr_curve(frames: &[FrameData], iou_min: f64) -> Result<Vec<PrPoint>> {
    let total_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one ground-truth box".into(),
        ));
    }
    // Greedy matching in score order means the matches among detections
    // scoring >= t do not depend on lower-scored detections, so one matching
    // pass per frame yields every threshold's counts.
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for frame in frames {
        let m = match_detections(&frame.detections, &frame.ground_truth, iou_min);
        let mut tp = vec![false; frame.detections.len()];
        for pair in &m.matched_pairs {
            tp[pair.det_index] = true;
        }
        scored.extend(frame.detections.iter().zip(tp).map(|(d, t)| (d.score, t)));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < scored.len() {
        let score = scored[k].0;
        while k < scored.len() && scored[k].0 == score {
            if scored[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(PrPoint {
            threshold: score,
            recall: tp as f64 / total_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

/// Area under the precision envelope: each recall step is weighted by the
/// best precision reached at that recall or beyond.
pub fn area_under_envelope(points: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (p, env) in points.iter().zip(envelope) {
        area += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    area.clamp(0.0, 1.0)
}

pub fn average_precision(frames: &[FrameData], iou_min: f64) -> Result<f64> {
    Ok(area_under_envelope(&pr_curve(frames, iou_min)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameCounts {
    pub frame_id: String,
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub average_precision: f64,
    pub miss_rate: f64,
    pub pr_curve: Vec<PrPoint>,
    /// Totals at the operating score threshold.
    pub counts: Counts,
    pub per_frame: Vec<FrameCounts>,
}

/// Full evaluation: AP over all thresholds, miss rate and counts at
/// `score_threshold`.
pub fn evaluate(frames: &[FrameData], iou_min: f64, score_threshold: f64) -> Result<EvalSummary> {
    if !(iou_min > 0.0 && iou_min <= 1.0) {
        return Err(Error::Domain(format!(
            "iou threshold must lie in (0, 1], got {iou_min}"
        )));
    }
    let pr = pr_curve(frames, iou_min)?;
    let mut counts = Counts::default();
    let mut per_frame = Vec::with_capacity(frames.len());
    for frame in frames {
        let kept: Vec<Detection> = frame
            .detections
            .iter()
            .filter(|d| d.score >= score_threshold)
            .cloned()
            .collect();
        let c = match_detections(&kept, &frame.ground_truth, iou_min).counts();
        counts += c;
        per_frame.push(FrameCounts {
            frame_id: frame.frame_id.clone(),
            counts: c,
        });
    }
    Ok(EvalSummary {
        average_precision: area_under_envelope(&pr),
        miss_rate: miss_rate_from_counts(&counts)?,
        pr_curve: pr,
        counts,
        per_frame,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    /// Train, validation, test.
    pub fractions: [f64; 3],
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            fractions: [0.7, 0.2, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "split fractions {:?} must be in [0, 1] and sum to 1",
                self.fractions
            )));
        }
        Ok(())
    }

    /// `(round(f_train·n), round(f_val·n), remainder)`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.fractions[0] * n as f64).round() as usize).min(n);
        let val = ((self.fractions[1] * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by a cut at the sizes of [`SplitSpec::sizes`].
pub fn split_dataset<T: Clone>(ids: &[T], spec: &SplitSpec) -> Result<Split<T>> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, val, _) = spec.sizes(ids.len());
    let pick = |r: &[usize]| r.iter().map(|&k| ids[k].clone()).collect::<Vec<T>>();
    Ok(Split {
        train: pick(&order[..train]),
        val: pick(&order[train..train + val]),
        test: pick(&order[train + val..]),
    })
}
