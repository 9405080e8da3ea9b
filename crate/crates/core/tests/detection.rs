mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use thermoguard_core::engine::{NetworkSpec, Shape, Tensor};
use thermoguard_core::geometry::iou;
use thermoguard_core::model::Model;
use thermoguard_core::yolo::{decode, detect, nms, AnchorSet, DecodeConfig};

proptest! {
    #[test]
    fn nms_equals_oracle(seed in any::<u64>(), threshold in 0.05..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets = random_detections(&mut rng, 50, 3);
        prop_assert_eq!(nms(&dets, threshold), nms_oracle(&dets, threshold));
    }

    #[test]
    fn nms_output_invariants(seed in any::<u64>(), threshold in 0.05..0.95f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets = random_detections(&mut rng, 40, 2);
        let kept = nms(&dets, threshold);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.score >= b.score);
                if a.class_id == b.class_id {
                    prop_assert!(iou(&a.bbox, &b.bbox).unwrap() < threshold);
                }
            }
        }
        prop_assert_eq!(nms(&kept, threshold), kept);
        let mut reversed = dets.clone();
        reversed.reverse();
        prop_assert_eq!(nms(&reversed, threshold), nms(&dets, threshold));
    }

    #[test]
    fn decode_equals_oracle(seed in any::<u64>(), grid in 1usize..7, classes in 1usize..4, threshold in 0.0..0.8f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = AnchorSet::default();
        let list: Vec<(f64, f64)> = anchors.iter().collect();
        let channels = anchors.len() * (5 + classes);
        let data = (0..channels * grid * grid).map(|_| rng.gen_range(-6.0f32..6.0)).collect();
        let raw = Tensor::new(Shape::new(channels, grid, grid), data).unwrap();
        let cfg = DecodeConfig { confidence_threshold: threshold, input_size: grid * 32, ..Default::default() };
        let got = decode(&raw, &anchors, &cfg).unwrap();
        let want = decode_oracle(&raw, &list, grid * 32, threshold);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.class_id, w.class_id);
            prop_assert!((g.score - w.score).abs() <= 1e-9);
            prop_assert!((g.bbox.x - w.bbox.x).abs() <= 1e-6);
            prop_assert!((g.bbox.w - w.bbox.w).abs() <= 1e-6);
        }
    }

    #[test]
    fn raising_confidence_keeps_a_subset(seed in any::<u64>(), lo in 0.0..0.5f64, dt in 0.0..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = AnchorSet::default();
        let data = (0..anchors.len() * 6 * 16).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        let raw = Tensor::new(Shape::new(anchors.len() * 6, 4, 4), data).unwrap();
        let at = |t: f64| decode(&raw, &anchors, &DecodeConfig { confidence_threshold: t, input_size: 128, ..Default::default() }).unwrap();
        let (low, high) = (at(lo), at(lo + dt));
        prop_assert!(high.iter().all(|d| low.contains(d)));
    }
}

#[test]
fn extreme_log_scales_stay_finite() {
    let anchors = AnchorSet::default();
    let raw = Tensor::filled(Shape::new(anchors.len() * 6, 2, 2), 1e4);
    let dets = decode(
        &raw,
        &anchors,
        &DecodeConfig {
            input_size: 64,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!dets.is_empty());
    assert!(dets.iter().all(|d| d.bbox.w.is_finite() && d.score <= 1.0));
}

#[test]
fn reference_model_detections_lie_in_the_input() {
    let model = Model::reference(5);
    let (_, head, anchors) = model.head.clone().unwrap();
    let cfg = DecodeConfig {
        confidence_threshold: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frame = random_tensor(&mut rng, model.net.input_shape());
    let dets = detect(&frame, &model.net, &head, &anchors, &cfg).unwrap();
    assert!(!dets.is_empty());
    for d in &dets {
        assert!(d.bbox.x >= 0.0 && d.bbox.y >= 0.0);
        assert!(d.bbox.right() <= 224.0 + 1e-9 && d.bbox.bottom() <= 224.0 + 1e-9);
    }
    let again = detect(&frame, &model.net, &head, &anchors, &cfg).unwrap();
    assert_eq!(dets, again);
    assert_eq!(NetworkSpec::reference(5), model.net);
}
