mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use thermoguard_core::eval::{
    average_precision, evaluate, match_detections, pr_curve, split_dataset, SplitSpec,
};
use thermoguard_core::json::{eval_summary_json, parse_detections, parse_labels};
use thermoguard_core::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matching_equals_oracle(seed in any::<u64>(), iou_min in 0.1..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for frame in synthetic_dataset(&mut rng, 5) {
            let m = match_detections(&frame.detections, &frame.ground_truth, iou_min);
            let (tp, fp, fn_) = match_oracle(&frame.detections, &frame.ground_truth, iou_min);
            prop_assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (tp, fp, fn_));
            let mut gts: Vec<usize> = m.matched_pairs.iter().map(|p| p.gt_index).collect();
            gts.sort_unstable();
            gts.dedup();
            prop_assert_eq!(gts.len(), m.matched_pairs.len());
        }
    }

    #[test]
    fn ap_equals_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = synthetic_dataset(&mut rng, 20);
        let ap = average_precision(&frames, 0.5).unwrap();
        prop_assert!((ap - ap_oracle(&frames, 0.5)).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn pr_curve_recall_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = synthetic_dataset(&mut rng, 10);
        let curve = pr_curve(&frames, 0.5).unwrap();
        for pair in curve.windows(2) {
            prop_assert!(pair[0].threshold > pair[1].threshold);
            prop_assert!(pair[0].recall <= pair[1].recall);
        }
    }

    #[test]
    fn split_partitions(n in 0usize..400, seed in any::<u64>()) {
        let ids: Vec<usize> = (0..n).collect();
        let s = split_dataset(&ids, &SplitSpec::new(seed)).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }
}

#[test]
fn frame_order_does_not_change_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = synthetic_dataset(&mut rng, 30);
    let mut reversed = frames.clone();
    reversed.reverse();
    let a = evaluate(&frames, 0.5, 0.5).unwrap();
    let b = evaluate(&reversed, 0.5, 0.5).unwrap();
    assert_eq!(a.average_precision, b.average_precision);
    assert_eq!(a.counts, b.counts);
}

#[test]
fn no_ground_truth_is_undefined() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut frames = synthetic_dataset(&mut rng, 3);
    for f in &mut frames {
        f.ground_truth.clear();
    }
    assert!(matches!(
        evaluate(&frames, 0.5, 0.5),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn json_inputs_round_into_an_evaluation() {
    let dets = parse_detections(
        r#"[{"frame":"a","detections":[{"x":0,"y":0,"w":10,"h":10,"score":0.9}]},
            {"frame":"b","detections":[]}]"#,
    )
    .unwrap();
    let labels = parse_labels(
        "{\"frame\":\"a\",\"boxes\":[{\"x\":0,\"y\":0,\"w\":10,\"h\":10}]}{\"frame\":\"b\",\"boxes\":[{\"x\":1,\"y\":1,\"w\":4,\"h\":4}]}",
    )
    .unwrap();
    let frames: Vec<_> = labels
        .into_iter()
        .zip(dets)
        .map(|(l, d)| thermoguard_core::eval::FrameData {
            frame_id: l.frame,
            detections: d.detections,
            ground_truth: l.boxes,
        })
        .collect();
    let s = evaluate(&frames, 0.5, 0.5).unwrap();
    assert_eq!(s.miss_rate, 0.5);
    assert_eq!(s.average_precision, 0.5);
    let text = eval_summary_json(&s).to_compact();
    assert!(
        text.starts_with("{\"average_precision\":0.500000,\"miss_rate\":0.500000"),
        "{text}"
    );
}

#[test]
fn unknown_label_fields_are_rejected() {
    assert!(parse_labels("{\"frame\":\"a\",\"boxes\":[],\"extra\":1}").is_err());
    assert!(parse_detections(
        "{\"frame\":\"a\",\"detections\":[{\"x\":0,\"y\":0,\"w\":1,\"h\":1,\"score\":2}]}"
    )
    .is_err());
}
