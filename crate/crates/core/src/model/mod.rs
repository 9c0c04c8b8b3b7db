//! Random-forest classification, patient aggregation and evaluation metrics.

pub mod aggregate;
pub mod forest;
pub mod importance;
pub mod metrics;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate_class_probs, aggregate_patient, Aggregation, PatientScore, RiskReport,
};
pub use forest::{train_forest, train_forest_with_classes, Forest, ForestConfig, MaxFeatures};
pub use importance::{permutation_importance, permutation_importance_with, FeatureImportance};
pub use metrics::{
    auc_prc, auc_roc, balanced_accuracy, multiclass_auc, multiclass_auc_prc, EvalMetrics,
    MetricError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewSamples(usize),
    #[error("feature matrix contains a non-finite value")]
    NonFiniteFeature,
    #[error("label {0} outside the class range")]
    InvalidLabel(usize),
    #[error("no predictions to aggregate")]
    EmptyPredictionList,
    #[error("model serialization: {0}")]
    Serialization(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Class probabilities for one swallow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    /// Index of the largest probability, lowest index on ties.
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_probs(class_probs: Vec<f64>) -> Self {
        let mut best = 0;
        for (i, &p) in class_probs.iter().enumerate() {
            if p > class_probs[best] {
                best = i;
            }
        }
        Self {
            class_probs,
            predicted_class: best,
        }
    }
}
