use fastmatch::corpus::split_labeled;
use fastmatch::distill::{label_aware_weight, map_target, map_weight, MappingConfig};
use fastmatch::eval::{pr_auc, roc_auc};
use fastmatch::models::{LabelSet, TaskSet};
use proptest::prelude::*;

/// Scores on a coarse grid (so ties happen) with both classes present.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u32..40, any::<bool>()), 2..200).prop_map(|mut v| {
        v[0].1 = true;
        v[1].1 = false;
        v.into_iter().map(|(s, y)| (f64::from(s) / 40.0, y)).unzip()
    })
}

proptest! {
    #[test]
    fn roc_ignores_increasing_transforms((s, y) in scored_labels()) {
        let moved: Vec<f64> = s.iter().map(|v| 3.0 * v + 1.0).collect();
        prop_assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&moved, &y).unwrap());
        prop_assert_eq!(pr_auc(&s, &y).unwrap(), pr_auc(&moved, &y).unwrap());
    }

    #[test]
    fn roc_of_negated_scores_is_complementary((s, y) in scored_labels()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mapped_targets_and_weights_stay_in_unit_range(s in 0.0..=1.0f64, m in prop::sample::select(vec!["f1:g1", "f1:g2", "f1:g3", "f2:g1", "f2:g2", "f2:g3"])) {
        let m: MappingConfig = m.parse().unwrap();
        let (t, w) = (map_target(s, &m).unwrap(), map_weight(s, &m).unwrap());
        prop_assert!((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&w));
    }

    #[test]
    fn label_aware_weight_is_theta_or_one(y in 0.0..=1.0f64, y_hat in 0.0..=1.0f64, yt in 0u8..2, theta in 0.0..=1.0f64) {
        let w = label_aware_weight(y, y_hat, yt, theta);
        prop_assert!(w == theta || w == 1.0);
        prop_assert_eq!(label_aware_weight(y, y_hat, yt, 1.0), 1.0);
    }

    #[test]
    fn split_sizes_and_membership(n in 1usize..300, f in 0.05..0.95f64, seed in any::<u64>()) {
        let rows: Vec<usize> = (0..n).collect();
        let (train, val) = split_labeled(&rows, f, seed).unwrap();
        prop_assert_eq!(val.len(), (f * n as f64).floor() as usize);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, rows);
    }
}

#[test]
fn binarization_is_monotone_and_nested() {
    let joint = TaskSet::joint();
    for set in [LabelSet::Ac, LabelSet::Lp] {
        let mut tasks: Vec<_> = joint.tasks().iter().filter(|t| t.label_set == set).collect();
        tasks.sort_by_key(|t| t.max_negative);
        for g in 0..set.max_grade() {
            for t in &tasks {
                assert!(t.binarize_grade(g).unwrap() <= t.binarize_grade(g + 1).unwrap());
            }
        }
        // growing negative sets flip a grade to 0, never back to 1
        for g in 0..=set.max_grade() {
            let labels: Vec<u8> = tasks.iter().map(|t| t.binarize_grade(g).unwrap()).collect();
            assert!(labels.windows(2).all(|w| w[0] >= w[1]), "{set:?} grade {g}: {labels:?}");
        }
    }
}
