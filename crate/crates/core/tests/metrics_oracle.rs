mod common;

use proptest::prelude::*;
use sleepssl::metrics::*;

fn counts_strategy() -> impl Strategy<Value = (usize, Vec<u64>)> {
    (2usize..=5).prop_flat_map(|k| (Just(k), prop::collection::vec(0u64..50, k * k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_match_formula_script((k, mut counts) in counts_strategy()) {
        if counts.iter().all(|&c| c == 0) {
            counts[0] = 1;
        }
        let cm = ConfusionMatrix::from_counts(k, counts.clone()).unwrap();
        let (acc, kappa, mf1) = common::metrics(k, &counts);
        prop_assert!((accuracy(&cm).unwrap() - acc).abs() <= 1e-12);
        prop_assert!((cohen_kappa(&cm).unwrap() - kappa).abs() <= 1e-12);
        prop_assert!((macro_f1(&cm).unwrap() - mf1).abs() <= 1e-12);
    }

    #[test]
    fn predictions_and_counts_agree(pairs in prop::collection::vec((0u8..5, 0u8..5), 1..200)) {
        let truth: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let cm = ConfusionMatrix::from_predictions(5, &truth, &pred).unwrap();
        prop_assert_eq!(cm.total() as usize, pairs.len());
        let hits = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(cm.trace() as usize, hits);
    }
}

#[test]
fn perfect_diagonal_has_unit_kappa() {
    for k in 2..=5 {
        let mut counts = vec![0; k * k];
        for i in 0..k {
            counts[i * k + i] = 3 + i as u64;
        }
        let cm = ConfusionMatrix::from_counts(k, counts).unwrap();
        assert_eq!(cohen_kappa(&cm).unwrap(), 1.0);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm).unwrap(), 1.0);
    }
}

#[test]
fn uniform_two_by_two_has_zero_kappa() {
    let cm = ConfusionMatrix::from_counts(2, vec![5, 5, 5, 5]).unwrap();
    assert_eq!(cohen_kappa(&cm).unwrap(), 0.0);
    assert_eq!(accuracy(&cm).unwrap(), 0.5);
}

#[test]
fn absent_class_is_recorded_in_report() {
    let truth = [0, 1, 2, 3, 0, 1];
    let fold = FoldMetrics::from_predictions(5, &truth, &truth).unwrap();
    assert!((fold.macro_f1 - 0.8).abs() < 1e-12);
    let report = aggregate("t", vec![fold]).unwrap();
    assert!(report.provenance("absent_classes_scored_f1_0").is_some());
    let csv = report.to_csv();
    assert!(csv.lines().any(|l| l.starts_with("fold,n,acc,kappa,mf1,cm_0_0")));
    assert!(csv.lines().any(|l| l.starts_with("mean,6,1.000000")));
}

#[test]
fn report_means_are_fold_averages() {
    let a = FoldMetrics::from_predictions(5, &[0, 1, 2], &[0, 1, 2]).unwrap();
    let b = FoldMetrics::from_predictions(5, &[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap();
    let r = aggregate("t", vec![a.clone(), b.clone()]).unwrap();
    assert_eq!(r.mean_accuracy, (a.accuracy + b.accuracy) / 2.0);
    assert_eq!(r.mean_kappa, (a.kappa + b.kappa) / 2.0);
    assert_eq!(r.overall.total(), 7);
}
