use proptest::prelude::*;

use stigpn::metrics::{ClassificationReport, MetricsReport, VideoTruth};
use stigpn::model::Prediction;

/// Counts every (truth, predicted) cell by scanning the pairs once per cell.
fn brute_confusion(truth: &[usize], pred: &[usize], classes: usize) -> Vec<Vec<usize>> {
    (0..classes)
        .map(|a| {
            (0..classes)
                .map(|b| truth.iter().zip(pred).filter(|&(&t, &p)| t == a && p == b).count())
                .collect()
        })
        .collect()
}

/// Per-class F1 from true positives, false positives and false negatives,
/// then the mean over classes seen in truth or predictions.
fn brute_macro_f1(confusion: &[Vec<usize>]) -> (Vec<Option<f64>>, f64) {
    let k = confusion.len();
    let mut per_class = Vec::new();
    let mut sum = 0.0;
    let mut seen = 0;
    for c in 0..k {
        let tp = confusion[c][c];
        let fp: usize = (0..k).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
        let fn_: usize = (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        if tp + fp + fn_ == 0 {
            per_class.push(None);
            continue;
        }
        let f1 = (2 * tp) as f64 / (2 * tp + fp + fn_) as f64;
        per_class.push(Some(f1));
        sum += f1;
        seen += 1;
    }
    (per_class, if seen == 0 { 0.0 } else { sum / seen as f64 })
}

fn label_sets() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (1usize..=8, 0usize..=60).prop_flat_map(|(k, n)| {
        (
            Just(k),
            proptest::collection::vec(0..k, n),
            proptest::collection::vec(0..k, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn report_matches_brute_force((k, truth, pred) in label_sets()) {
        let r = ClassificationReport::from_labels(&truth, &pred, k).unwrap();
        let confusion = brute_confusion(&truth, &pred, k);
        prop_assert_eq!(&r.confusion, &confusion);
        let (per_class, macro_f1) = brute_macro_f1(&confusion);
        let got: Vec<Option<f64>> = r.per_class.iter().map(|c| c.f1).collect();
        prop_assert_eq!(got, per_class);
        prop_assert_eq!(r.macro_f1, macro_f1);
        let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        let expect = if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 };
        prop_assert_eq!(r.top1, expect);
        prop_assert!((0.0..=1.0).contains(&r.macro_f1));
        prop_assert!(r.top5 >= r.top1);
        for (c, s) in r.per_class.iter().enumerate() {
            prop_assert_eq!(s.support, truth.iter().filter(|&&t| t == c).count());
        }
    }

    #[test]
    fn label_permutation_leaves_macro_f1(
        (k, truth, pred) in label_sets(),
        shift in 0usize..8,
    ) {
        let relabel = |v: &[usize]| -> Vec<usize> { v.iter().map(|&c| (c + shift) % k).collect() };
        let a = ClassificationReport::from_labels(&truth, &pred, k).unwrap();
        let b = ClassificationReport::from_labels(&relabel(&truth), &relabel(&pred), k).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert_eq!(a.top1, b.top1);
    }
}

#[test]
fn three_sample_hand_case() {
    // predictions [A, A, B] against truth [A, B, B]
    let r = ClassificationReport::from_labels(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
    assert_eq!(r.per_class[0].f1, Some(2.0 / 3.0));
    assert_eq!(r.per_class[1].f1, Some(2.0 / 3.0));
    assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn single_wrong_class_scores_zero_for_missed_classes() {
    let r = ClassificationReport::from_labels(&[0, 1, 2, 0], &[3, 3, 3, 3], 4).unwrap();
    for c in 0..4 {
        assert_eq!(r.per_class[c].f1, Some(0.0));
    }
    assert_eq!(r.macro_f1, 0.0);
}

#[test]
fn evaluate_pairs_affordances_by_instance() {
    let preds = vec![Prediction {
        video_id: "v".into(),
        activity: vec![0.1, 0.9],
        affordances: vec![(2, vec![0.8, 0.2]), (1, vec![0.3, 0.7])],
    }];
    let truth = vec![VideoTruth {
        activity: 1,
        affordances: vec![(1, 1), (2, 0)],
    }];
    let r = MetricsReport::evaluate(&preds, &truth, 2, 2).unwrap();
    assert_eq!(r.activity.top1, 1.0);
    assert_eq!(r.affordance.unwrap().top1, 1.0);

    let missing = vec![VideoTruth {
        activity: 1,
        affordances: vec![(3, 0)],
    }];
    assert!(MetricsReport::evaluate(&preds, &missing, 2, 2).is_err());
}

#[test]
fn report_json_round_trips() {
    let r = ClassificationReport::from_labels(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
    let report = MetricsReport {
        activity: r,
        affordance: None,
    };
    let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    assert!(report.to_table(&["a", "b", "c"], &[]).contains("macro F1"));
}
