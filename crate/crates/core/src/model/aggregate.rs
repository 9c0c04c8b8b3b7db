//! Patient-level aggregation of per-swallow predictions.
//!
//! A swallow's risk is the probability mass on every non-normal class, which
//! for the binary task is simply the abnormal-class probability.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::{ModelError, Prediction};

/// Per-swallow risk at or above this counts as an abnormal vote.
pub const VOTE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
    Mode,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Mean, Aggregation::Max, Aggregation::Mode];
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "mode" => Ok(Aggregation::Mode),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Mode => "mode",
        })
    }
}

/// Probability of any non-normal class.
pub fn swallow_risk(p: &Prediction) -> f64 {
    p.class_probs[1..].iter().sum()
}

/// Class a swallow votes for under mode aggregation.
fn vote(p: &Prediction) -> usize {
    if p.class_probs.len() == 2 {
        usize::from(swallow_risk(p) >= VOTE_THRESHOLD)
    } else {
        p.predicted_class
    }
}

/// Most frequent vote and its count; ties go to the higher-risk class.
fn modal_vote(preds: &[Prediction]) -> (usize, usize) {
    let n_classes = preds[0].class_probs.len();
    let mut counts = vec![0usize; n_classes];
    for p in preds {
        counts[vote(p)] += 1;
    }
    let mut best = 0;
    for c in 1..n_classes {
        if counts[c] >= counts[best] {
            best = c;
        }
    }
    (best, counts[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    /// Higher means riskier; suitable for ranking metrics.
    pub score: f64,
    pub class: usize,
}

/// Collapses a patient's swallow predictions into one risk score.
///
/// * mean: average swallow risk;
/// * max: largest swallow risk;
/// * mode: the modal vote, scored as its vote share when it is a risk class
///   and one minus its share when it is the normal class.
///
/// For mean and max the class is abnormal when the score reaches 0.5.
pub fn aggregate_patient(
    preds: &[Prediction],
    strategy: Aggregation,
) -> Result<PatientScore, ModelError> {
    if preds.is_empty() {
        return Err(ModelError::EmptyPredictionList);
    }
    let risks = preds.iter().map(swallow_risk);
    let threshold_class = |s: f64| usize::from(s >= VOTE_THRESHOLD);
    Ok(match strategy {
        Aggregation::Mean => {
            let s = risks.sum::<f64>() / preds.len() as f64;
            PatientScore {
                score: s,
                class: threshold_class(s),
            }
        }
        Aggregation::Max => {
            let s = risks.fold(f64::NEG_INFINITY, f64::max);
            PatientScore {
                score: s,
                class: threshold_class(s),
            }
        }
        Aggregation::Mode => {
            let (class, votes) = modal_vote(preds);
            let share = votes as f64 / preds.len() as f64;
            PatientScore {
                score: if class == 0 { 1.0 - share } else { share },
                class,
            }
        }
    })
}

/// Patient-level class-probability vector for multi-class evaluation.
///
/// mean averages the swallow distributions, max takes the per-class maximum
/// and renormalises, mode uses the vote shares.
pub fn aggregate_class_probs(
    preds: &[Prediction],
    strategy: Aggregation,
) -> Result<Vec<f64>, ModelError> {
    if preds.is_empty() {
        return Err(ModelError::EmptyPredictionList);
    }
    let k = preds[0].class_probs.len();
    let n = preds.len() as f64;
    let out = match strategy {
        Aggregation::Mean => (0..k)
            .map(|c| preds.iter().map(|p| p.class_probs[c]).sum::<f64>() / n)
            .collect(),
        Aggregation::Max => {
            let m: Vec<f64> = (0..k)
                .map(|c| preds.iter().map(|p| p.class_probs[c]).fold(0.0, f64::max))
                .collect();
            let total: f64 = m.iter().sum();
            m.iter().map(|v| v / total).collect()
        }
        Aggregation::Mode => {
            let mut counts = vec![0.0; k];
            for p in preds {
                counts[vote(p)] += 1.0;
            }
            counts.iter().map(|c| c / n).collect()
        }
    };
    Ok(out)
}

/// A patient's swallow predictions with all three aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub patient_id: String,
    pub per_swallow: Vec<Prediction>,
    pub mean_risk: f64,
    pub max_risk: f64,
    pub mode_risk: usize,
    pub mode_score: f64,
}

impl RiskReport {
    pub fn new(
        patient_id: impl Into<String>,
        per_swallow: Vec<Prediction>,
    ) -> Result<Self, ModelError> {
        let mean = aggregate_patient(&per_swallow, Aggregation::Mean)?;
        let max = aggregate_patient(&per_swallow, Aggregation::Max)?;
        let mode = aggregate_patient(&per_swallow, Aggregation::Mode)?;
        Ok(Self {
            patient_id: patient_id.into(),
            per_swallow,
            mean_risk: mean.score,
            max_risk: max.score,
            mode_risk: mode.class,
            mode_score: mode.score,
        })
    }

    pub fn score(&self, strategy: Aggregation) -> f64 {
        match strategy {
            Aggregation::Mean => self.mean_risk,
            Aggregation::Max => self.max_risk,
            Aggregation::Mode => self.mode_score,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(risks: &[f64]) -> Vec<Prediction> {
        risks
            .iter()
            .map(|&r| Prediction::from_probs(vec![1.0 - r, r]))
            .collect()
    }

    #[test]
    fn worked_example() {
        let p = binary(&[0.2, 0.8, 0.9]);
        let mean = aggregate_patient(&p, Aggregation::Mean).unwrap();
        assert!((mean.score - 1.9 / 3.0).abs() < 1e-15);
        assert_eq!(aggregate_patient(&p, Aggregation::Max).unwrap().score, 0.9);
        let mode = aggregate_patient(&p, Aggregation::Mode).unwrap();
        assert_eq!(mode.class, 1);
        assert!((mode.score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_low_risk_swallow() {
        let p = binary(&[0.4]);
        assert_eq!(aggregate_patient(&p, Aggregation::Mean).unwrap().score, 0.4);
        assert_eq!(aggregate_patient(&p, Aggregation::Max).unwrap().score, 0.4);
        let mode = aggregate_patient(&p, Aggregation::Mode).unwrap();
        assert_eq!((mode.class, mode.score), (0, 0.0));
    }

    #[test]
    fn tied_vote_goes_to_risk_class() {
        let p = binary(&[0.1, 0.2, 0.7, 0.9]);
        let mode = aggregate_patient(&p, Aggregation::Mode).unwrap();
        assert_eq!((mode.class, mode.score), (1, 0.5));
        let three = vec![
            Prediction::from_probs(vec![0.8, 0.1, 0.1]),
            Prediction::from_probs(vec![0.1, 0.1, 0.8]),
        ];
        assert_eq!(
            aggregate_patient(&three, Aggregation::Mode).unwrap().class,
            2
        );
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(matches!(
            aggregate_patient(&[], Aggregation::Mean),
            Err(ModelError::EmptyPredictionList)
        ));
    }

    #[test]
    fn class_prob_aggregates_sum_to_one() {
        let p = vec![
            Prediction::from_probs(vec![0.6, 0.3, 0.1]),
            Prediction::from_probs(vec![0.2, 0.2, 0.6]),
        ];
        for s in Aggregation::ALL {
            let v = aggregate_class_probs(&p, s).unwrap();
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn risk_report_fields() {
        let r = RiskReport::new("P1", binary(&[0.2, 0.8, 0.9])).unwrap();
        assert!(r.mean_risk <= r.max_risk);
        assert_eq!(r.mode_risk, 1);
        assert_eq!(r.score(Aggregation::Max), 0.9);
    }
}
