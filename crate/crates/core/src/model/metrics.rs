//! Ranking and classification metrics.

use serde::{Deserialize, Serialize};

use super::Prediction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need both classes present")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("label {label} outside 0..{n_classes}")]
    InvalidLabel { label: usize, n_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub auc_roc: f64,
    pub auc_prc: f64,
    pub balanced_accuracy: f64,
}

fn check(scores: &[f64], n_labels: usize) -> Result<(), MetricError> {
    if scores.len() != n_labels {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: n_labels,
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore);
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney U statistic with mid-ranks,
/// i.e. `P(s_pos > s_neg) + P(s_pos == s_neg) / 2`.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of 1-based mid-ranks of the positives; half-integers are exact in f64
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: `sum_i (R_i - R_{i-1}) * P_i` over descending distinct
/// score thresholds.
pub fn auc_prc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mean per-class recall over classes `0..n_classes`.
pub fn balanced_accuracy(
    predicted: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<f64, MetricError> {
    if predicted.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: predicted.len(),
            labels: labels.len(),
        });
    }
    let mut support = vec![0usize; n_classes];
    let mut hits = vec![0usize; n_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if l >= n_classes {
            return Err(MetricError::InvalidLabel {
                label: l,
                n_classes,
            });
        }
        support[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    if let Some(c) = support.iter().position(|&s| s == 0) {
        return Err(MetricError::EmptyClass(c));
    }
    Ok(hits
        .iter()
        .zip(&support)
        .map(|(&h, &s)| h as f64 / s as f64)
        .sum::<f64>()
        / n_classes as f64)
}

fn one_vs_rest<F>(probs: &[Vec<f64>], labels: &[usize], metric: F) -> Result<f64, MetricError>
where
    F: Fn(&[f64], &[bool]) -> Result<f64, MetricError>,
{
    if probs.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: probs.len(),
            labels: labels.len(),
        });
    }
    let n_classes = probs.first().map_or(0, |r| r.len());
    let mut present = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(MetricError::InvalidLabel {
                label: l,
                n_classes,
            });
        }
        present[l] = true;
    }
    let classes: Vec<usize> = (0..n_classes).filter(|&c| present[c]).collect();
    if classes.len() < 2 {
        return Err(MetricError::SingleClass);
    }
    let mut total = 0.0;
    for &c in &classes {
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += metric(&scores, &is_c)?;
    }
    Ok(total / classes.len() as f64)
}

/// Macro-averaged one-vs-rest AUC-ROC over the classes present in `labels`.
pub fn multiclass_auc(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64, MetricError> {
    one_vs_rest(probs, labels, auc_roc)
}

/// Macro-averaged one-vs-rest average precision.
pub fn multiclass_auc_prc(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64, MetricError> {
    one_vs_rest(probs, labels, auc_prc)
}

/// All three headline metrics from class-probability rows.
///
/// Binary problems rank by the positive-class probability; larger label
/// spaces use macro one-vs-rest averages.
pub fn evaluate_probs(
    probs: &[Vec<f64>],
    predicted: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<EvalMetrics, MetricError> {
    let balanced_accuracy = balanced_accuracy(predicted, labels, n_classes)?;
    if n_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        Ok(EvalMetrics {
            auc_roc: auc_roc(&scores, &positive)?,
            auc_prc: auc_prc(&scores, &positive)?,
            balanced_accuracy,
        })
    } else {
        Ok(EvalMetrics {
            auc_roc: multiclass_auc(probs, labels)?,
            auc_prc: multiclass_auc_prc(probs, labels)?,
            balanced_accuracy,
        })
    }
}

/// Fraction of predictions whose class matches the label.
pub fn accuracy(predictions: &[Prediction], labels: &[usize]) -> Result<f64, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::EmptyClass(0));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| p.predicted_class == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
