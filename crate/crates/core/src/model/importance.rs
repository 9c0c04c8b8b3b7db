//! Permutation feature importance.

use serde::{Deserialize, Serialize};

use super::{Forest, ModelError, Prediction};
use crate::rng::{mix64, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    /// Mean drop of the metric when this column is shuffled.
    pub mean_drop: f64,
}

/// Scores predictions against labels; higher is better.
pub type Metric<'a> = dyn Fn(&[Prediction], &[usize]) -> Result<f64, ModelError> + 'a;

/// Metric drop per feature, averaged over `n_repeats` seeded column shuffles
/// and sorted by decreasing drop (ties by feature index).
pub fn permutation_importance(
    forest: &Forest,
    x: &[Vec<f64>],
    y: &[usize],
    metric: &Metric<'_>,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>, ModelError> {
    permutation_importance_with(forest, x, y, metric, n_repeats, |feature, repeat, n| {
        let mut rng = SplitMix64::derive(seed, mix64(feature as u64) ^ repeat as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        perm
    })
}

/// As [`permutation_importance`], with row permutations supplied by
/// `permutation(feature, repeat, n_rows)`.
pub fn permutation_importance_with<P>(
    forest: &Forest,
    x: &[Vec<f64>],
    y: &[usize],
    metric: &Metric<'_>,
    n_repeats: usize,
    permutation: P,
) -> Result<Vec<FeatureImportance>, ModelError>
where
    P: Fn(usize, usize, usize) -> Vec<usize>,
{
    if n_repeats == 0 {
        return Err(ModelError::InvalidConfig("n_repeats must be >= 1".into()));
    }
    let baseline = metric(&forest.predict_many(x)?, y)?;
    let mut out = Vec::with_capacity(forest.n_features);
    let mut shuffled = x.to_vec();
    for f in 0..forest.n_features {
        let mut total = 0.0;
        for r in 0..n_repeats {
            let perm = permutation(f, r, x.len());
            for (row, &src) in shuffled.iter_mut().zip(&perm) {
                row[f] = x[src][f];
            }
            total += baseline - metric(&forest.predict_many(&shuffled)?, y)?;
        }
        for (row, orig) in shuffled.iter_mut().zip(x) {
            row[f] = orig[f];
        }
        out.push(FeatureImportance {
            feature: f,
            mean_drop: total / n_repeats as f64,
        });
    }
    out.sort_by(|a, b| {
        b.mean_drop
            .total_cmp(&a.mean_drop)
            .then(a.feature.cmp(&b.feature))
    });
    Ok(out)
}
