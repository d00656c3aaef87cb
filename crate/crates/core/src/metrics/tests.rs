use proptest::prelude::*;

use super::*;

fn wp(range: std::ops::Range<usize>, class: usize, n: usize) -> WindowPrediction {
    let mut probs = vec![0.0; n];
    probs[class] = 1.0;
    WindowPrediction {
        sample_range: range,
        class,
        probs,
    }
}

fn seg(start: usize, end: usize, class: usize, confidence: f64) -> Segment {
    Segment {
        start,
        end,
        class,
        confidence,
    }
}

#[test]
fn unwindow_non_overlapping_is_identity() {
    let labels = [2, 0, 1, 1];
    let ws: Vec<_> = labels.iter().enumerate().map(|(i, &c)| wp(i * 5..i * 5 + 5, c, 3)).collect();
    let p = unwindow(&ws, 20, 3, OverlapRule::LastWins).unwrap();
    let expected: Vec<usize> = labels.iter().flat_map(|&c| [c; 5]).collect();
    assert_eq!(p.classes, expected);
    assert!(p.covered.iter().all(|&c| c));
}

#[test]
fn unwindow_last_window_wins() {
    let p = unwindow(&[wp(0..50, 0, 2), wp(25..75, 1, 2)], 75, 2, OverlapRule::LastWins).unwrap();
    assert!(p.classes[..25].iter().all(|&c| c == 0));
    assert!(p.classes[25..].iter().all(|&c| c == 1));
}

#[test]
fn unwindow_marks_uncovered_tail() {
    let p = unwindow(&[wp(0..40, 0, 2)], 50, 2, OverlapRule::LastWins).unwrap();
    assert_eq!(p.covered.iter().filter(|&&c| !c).count(), 10);
    assert!(p.covered[40..].iter().all(|&c| !c));
    assert!(unwindow(&[wp(45..55, 0, 2)], 50, 2, OverlapRule::LastWins).is_err());
}

#[test]
fn unwindow_majority_vote() {
    let ws = [wp(0..30, 0, 2), wp(10..40, 1, 2), wp(20..50, 0, 2)];
    let p = unwindow(&ws, 50, 2, OverlapRule::Majority).unwrap();
    assert_eq!(p.classes[15], 1); // tie 1:1, latest window wins
    assert_eq!(p.classes[25], 0); // 2:1
    assert!((p.prob(25, 0) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(p.classes[35], 0);
}

#[test]
fn macro_f1_examples() {
    assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
    assert_eq!(macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap(), 0.5);
    // Class 2 never predicted: F1 0 counts; class 3 absent from both: skipped.
    let f = macro_f1(&[0, 1, 1, 1], &[0, 1, 2, 2], 4).unwrap();
    let f1_class1 = 2.0 * (1.0 / 3.0) * 1.0 / (1.0 / 3.0 + 1.0);
    assert!((f - (1.0 + f1_class1 + 0.0) / 3.0).abs() < 1e-15);
    assert!(macro_f1(&[0], &[0, 1], 2).is_err());
}

#[test]
fn confusion_rows_are_supports() {
    let m = confusion_matrix(&[0, 1, 1, 2], &[0, 0, 1, 2], 3).unwrap();
    assert_eq!(m, [vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
}

#[test]
fn rle_examples() {
    let p = PerSamplePredictions::from_labels(&[0, 0, 1, 1, 1], 2);
    assert_eq!(rle_segments(&p, None), [seg(0, 2, 0, 1.0), seg(2, 5, 1, 1.0)]);
    assert_eq!(rle_segments(&p, Some(0)), [seg(2, 5, 1, 1.0)]);
    let null = PerSamplePredictions::from_labels(&[3, 3, 3], 4);
    assert!(rle_segments(&null, Some(3)).is_empty());

    let mut p = PerSamplePredictions::from_labels(&[1, 1], 2);
    p.probs = vec![0.1, 0.9, 0.3, 0.7];
    let s = rle_segments(&p, None);
    assert!((s[0].confidence - 0.8).abs() < 1e-15);
}

#[test]
fn rle_breaks_at_uncovered_samples() {
    let mut p = PerSamplePredictions::from_labels(&[1, 1, 1, 1], 2);
    p.covered[2] = false;
    assert_eq!(rle_segments(&p, None), [seg(0, 2, 1, 1.0), seg(3, 4, 1, 1.0)]);
}

#[test]
fn tiou_examples() {
    assert_eq!(tiou(&seg(3, 9, 0, 1.0), &seg(3, 9, 0, 1.0)), 1.0);
    assert_eq!(tiou(&seg(0, 5, 0, 1.0), &seg(5, 9, 0, 1.0)), 0.0);
    assert_eq!(tiou(&seg(10, 20, 0, 1.0), &seg(15, 25, 0, 1.0)), 5.0 / 15.0);
}

#[test]
fn ap_examples() {
    let gt = [seg(0, 10, 0, 1.0)];
    assert_eq!(average_precision(&[seg(0, 10, 0, 0.4)], &gt, 0, 0.5), Some(1.0));
    assert_eq!(average_precision(&[seg(0, 10, 1, 0.4)], &gt, 1, 0.5), None);
    assert_eq!(average_precision(&[], &gt, 0, 0.5), Some(0.0));

    // A false positive ranked first halves precision at the only recall step.
    let pred = [seg(20, 30, 0, 0.9), seg(0, 10, 0, 0.5)];
    assert_eq!(average_precision(&pred, &gt, 0, 0.5), Some(0.5));
    // Two GTs, hits at ranks 1 and 3: 0.5·1 + 0.5·(2/3).
    let gt2 = [seg(0, 10, 0, 1.0), seg(40, 50, 0, 1.0)];
    let pred = [seg(0, 10, 0, 0.9), seg(20, 30, 0, 0.8), seg(40, 50, 0, 0.7)];
    let ap = average_precision(&pred, &gt2, 0, 0.5).unwrap();
    assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn ap_threshold_sweep_on_partial_overlap() {
    let truth: Vec<usize> = [vec![0; 100], vec![1; 100]].concat();
    let mut predicted = truth.clone();
    for c in &mut predicted[80..100] {
        *c = 1;
    }
    // Class 0: [0,80) vs [0,100) → tIoU 0.8. Class 1: [80,200) vs [100,200) → 100/120.
    let pred = PerSamplePredictions::from_labels(&predicted, 2);
    let cfg = EvalConfig {
        tiou_thresholds: TiouThresholds::new(vec![0.3, 0.5, 0.7, 0.8, 0.85, 0.9]).unwrap(),
        ..EvalConfig::default()
    };
    let m = evaluate_subject("s", &truth, &pred, &cfg).unwrap();
    let expected = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    for (got, want) in m.ap_per_threshold.iter().zip(expected) {
        assert_eq!(got.unwrap(), want);
    }
    let gt0 = [seg(0, 100, 0, 1.0)];
    assert_eq!(average_precision(&[seg(0, 80, 0, 1.0)], &gt0, 0, 0.8), Some(1.0));
    assert_eq!(average_precision(&[seg(0, 80, 0, 1.0)], &gt0, 0, 0.81), Some(0.0));
}

#[test]
fn perfect_predictions_score_one() {
    let truth = [0, 0, 1, 1, 2, 2, 0, 0];
    let pred = PerSamplePredictions::from_labels(&truth, 3);
    let m = evaluate_subject("s", &truth, &pred, &EvalConfig::default()).unwrap();
    assert_eq!(m.macro_f1, 1.0);
    assert_eq!(m.map, Some(1.0));
    assert!(m.ap_per_threshold.iter().all(|a| *a == Some(1.0)));
}

#[test]
fn aggregation_order_subjects_then_seeds() {
    let cfg = EvalConfig::default();
    let truth = [0, 0, 1, 1];
    let good = PerSamplePredictions::from_labels(&truth, 2);
    let half = PerSamplePredictions::from_labels(&[0, 1, 0, 1], 2);
    let a = evaluate_subject("a", &truth, &good, &cfg).unwrap();
    let b = evaluate_subject("b", &truth, &half, &cfg).unwrap();
    let b_only = evaluate_subject("b", &truth, &half, &cfg).unwrap();
    // Seed 1: subjects {1.0, 0.5} → 0.75. Seed 2: {0.5} → 0.5. Mean 0.625,
    // not the pooled-subject mean 2/3.
    let report = aggregate_seeds(vec![(1, vec![a, b]), (2, vec![b_only])], 2, &cfg);
    assert_eq!(report.seeds[0].mean_macro_f1, 0.75);
    assert_eq!(report.seeds[1].mean_macro_f1, 0.5);
    assert_eq!(report.macro_f1, 0.625);
    let total: u64 = report.confusion.iter().flatten().sum();
    assert_eq!(total, 12);
}

#[test]
fn null_class_excluded_from_map_only_when_configured() {
    let truth = [0, 0, 1, 1, 0, 0];
    let pred = PerSamplePredictions::from_labels(&[0, 0, 1, 1, 1, 1], 2);
    let with_null = EvalConfig {
        null_class: Some(0),
        ..EvalConfig::default()
    };
    let m = evaluate_subject("s", &truth, &pred, &with_null).unwrap();
    // Only class 1 is scored: prediction [2,6) vs truth [2,4) → tIoU 0.5.
    assert_eq!(m.ap_per_threshold[2], Some(1.0));
    assert_eq!(m.ap_per_threshold[3], Some(0.0));
    let no_null_f1 = EvalConfig {
        null_in_f1: false,
        ..with_null
    };
    let m2 = evaluate_subject("s", &truth, &pred, &no_null_f1).unwrap();
    assert_eq!(m2.macro_f1, m.per_class_f1[1].unwrap());
}

#[test]
fn thresholds_validated() {
    assert!(TiouThresholds::new(vec![0.5, 0.5]).is_err());
    assert!(TiouThresholds::new(vec![0.0, 0.5]).is_err());
    assert!(TiouThresholds::new(vec![]).is_err());
    assert!(serde_json::from_str::<TiouThresholds>("[0.7, 0.3]").is_err());
    assert_eq!(TiouThresholds::default().values(), [0.3, 0.4, 0.5, 0.6, 0.7]);
}

#[test]
fn confusion_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    write_confusion_csv(&[vec![3, 1], vec![0, 2]], &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "truth,pred_0,pred_1\n0,3,1\n1,0,2\n");
}

fn labels(n_classes: usize, len: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0..n_classes, len)
}

fn segments() -> impl Strategy<Value = Vec<Segment>> {
    proptest::collection::vec((0usize..40, 1usize..15, 0.0f64..1.0), 0..6)
        .prop_map(|v| v.into_iter().map(|(s, l, c)| seg(s, s + l, 0, c)).collect())
}

proptest! {
    #[test]
    fn macro_f1_invariant_under_relabeling(
        (pred, truth) in (1usize..40).prop_flat_map(|n| (labels(4, n), labels(4, n))),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let f = macro_f1(&pred, &truth, 4).unwrap();
        let p2: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let t2: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        prop_assert!((f - macro_f1(&p2, &t2, 4).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn ap_non_increasing_in_threshold(pred in segments(), gt in segments()) {
        let mut last = f64::INFINITY;
        for th in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            if let Some(ap) = average_precision(&pred, &gt, 0, th) {
                prop_assert!(ap <= last + 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
                last = ap;
            }
        }
    }

    #[test]
    fn ground_truth_as_prediction_scores_one(truth in labels(3, 60), th in 0.05f64..1.0) {
        let p = PerSamplePredictions::from_labels(&truth, 3);
        let gt = rle_segments(&p, None);
        for c in 0..3 {
            if let Some(ap) = average_precision(&gt, &gt, c, th) {
                prop_assert_eq!(ap, 1.0);
            }
        }
    }

    #[test]
    fn confusion_total_counts_covered_samples(
        truth in labels(3, 50),
        windows in proptest::collection::vec((0usize..45, 1usize..20, 0usize..3), 0..8),
    ) {
        let ws: Vec<WindowPrediction> = windows
            .into_iter()
            .map(|(s, l, c)| wp(s..(s + l).min(50), c, 3))
            .collect();
        let p = unwindow(&ws, 50, 3, OverlapRule::LastWins).unwrap();
        let m = evaluate_subject("s", &truth, &p, &EvalConfig::default()).unwrap();
        let total: u64 = m.confusion.iter().flatten().sum();
        prop_assert_eq!(total, p.covered.iter().filter(|&&c| c).count() as u64);
        prop_assert_eq!(total, m.evaluated_samples);
    }
}
