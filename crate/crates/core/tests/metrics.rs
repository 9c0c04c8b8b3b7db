use proptest::prelude::*;
use swallowsense::model::aggregate::swallow_risk;
use swallowsense::model::metrics::evaluate_probs;
use swallowsense::model::{
    aggregate_patient, auc_prc, auc_roc, multiclass_auc, Aggregation, MetricError, Prediction,
};
use swallowsense::rng::SplitMix64;

/// Mann-Whitney statistic by brute force over every positive/negative pair.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision by sweeping every distinct threshold from high to low
/// and recounting the confusion matrix from scratch at each.
fn threshold_sweep_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s >= t && l)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s >= t && !l)
            .count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    ap
}

/// Scores on a coarse grid so ties are common.
fn case(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = SplitMix64::new(seed);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| ((rng.next_f64() + if l { 0.3 } else { 0.0 }) * 20.0).floor() / 20.0)
        .collect();
    (scores, labels)
}

#[test]
fn auc_matches_pairwise_oracle_exactly() {
    for seed in 0..200u64 {
        let n = 2 + (seed as usize * 37) % 199;
        let (s, l) = case(seed, n);
        assert_eq!(
            auc_roc(&s, &l).unwrap(),
            pairwise_auc(&s, &l),
            "seed {seed} n {n}"
        );
    }
}

#[test]
fn average_precision_matches_sweep() {
    for seed in 0..200u64 {
        let (s, l) = case(seed + 1000, 30);
        assert!((auc_prc(&s, &l).unwrap() - threshold_sweep_ap(&s, &l)).abs() < 1e-12);
    }
    let l = [true, false, false, true, false];
    assert!((auc_prc(&[0.5; 5], &l).unwrap() - 0.4).abs() < 1e-15);
}

proptest! {
    #[test]
    fn auc_invariant_under_increasing_transform(seed in any::<u64>(), n in 2usize..120) {
        let (s, l) = case(seed, n);
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 7.0).collect();
        prop_assert_eq!(auc_roc(&s, &l).unwrap(), auc_roc(&t, &l).unwrap());
    }

    #[test]
    fn mean_never_exceeds_max(risks in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let preds: Vec<Prediction> = risks.iter().map(|&r| Prediction::from_probs(vec![1.0 - r, r])).collect();
        let mean = aggregate_patient(&preds, Aggregation::Mean).unwrap();
        let max = aggregate_patient(&preds, Aggregation::Max).unwrap();
        prop_assert!(mean.score <= max.score);
        prop_assert!((0.0..=1.0).contains(&mean.score) && (0.0..=1.0).contains(&max.score));
        let mode = aggregate_patient(&preds, Aggregation::Mode).unwrap();
        prop_assert!((0.0..=1.0).contains(&mode.score));
    }

    #[test]
    fn mode_ties_go_to_risk_class(k in 1usize..10, lo in 0.0f64..0.49, hi in 0.5f64..=1.0) {
        let mut preds = vec![Prediction::from_probs(vec![1.0 - lo, lo]); k];
        preds.extend(vec![Prediction::from_probs(vec![1.0 - hi, hi]); k]);
        let mode = aggregate_patient(&preds, Aggregation::Mode).unwrap();
        prop_assert_eq!(mode.class, 1);
        prop_assert_eq!(mode.score, 0.5);
    }
}

#[test]
fn worked_aggregation_example() {
    let preds: Vec<Prediction> = [0.2, 0.8, 0.9]
        .iter()
        .map(|&r| Prediction::from_probs(vec![1.0 - r, r]))
        .collect();
    assert_eq!(
        preds.iter().map(swallow_risk).collect::<Vec<_>>(),
        vec![0.2, 0.8, 0.9]
    );
    let mean = aggregate_patient(&preds, Aggregation::Mean).unwrap();
    assert_eq!(format!("{:.4}", mean.score), "0.6333");
    assert_eq!(
        aggregate_patient(&preds, Aggregation::Max).unwrap().score,
        0.9
    );
    assert_eq!(
        aggregate_patient(&preds, Aggregation::Mode).unwrap().class,
        1
    );
}

#[test]
fn multiclass_matches_per_class_oracle() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..50 {
        let labels: Vec<usize> = (0..30)
            .map(|i| if i < 3 { i } else { rng.below(3) })
            .collect();
        let probs: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| {
                let mut p: Vec<f64> = (0..3)
                    .map(|c| rng.next_f64() + if c == l { 0.4 } else { 0.0 })
                    .collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                p
            })
            .collect();
        let oracle = (0..3)
            .map(|c| {
                let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                let l: Vec<bool> = labels.iter().map(|&x| x == c).collect();
                pairwise_auc(&s, &l)
            })
            .sum::<f64>()
            / 3.0;
        assert!((multiclass_auc(&probs, &labels).unwrap() - oracle).abs() < 1e-15);
    }
}

#[test]
fn metric_errors() {
    assert_eq!(
        auc_roc(&[0.1, 0.2], &[false, false]),
        Err(MetricError::SingleClass)
    );
    assert_eq!(
        auc_roc(&[0.1], &[false, true]),
        Err(MetricError::LengthMismatch {
            scores: 1,
            labels: 2
        })
    );
    let probs = vec![vec![0.5, 0.5]; 2];
    assert!(evaluate_probs(&probs, &[0, 0], &[0, 0], 2).is_err());
}
