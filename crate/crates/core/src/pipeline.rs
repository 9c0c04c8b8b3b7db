//! End-to-end workflows over a manifest: segmentation, feature tables,
//! training and patient-level evaluation across repeated splits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio_io::{self, AudioClip, AudioError};
use crate::dataset::{
    make_splits, DatasetError, LabelScheme, PatientRecord, PatientUnit, Recording, SplitConfig,
    SplitPlan,
};
use crate::features::{self, Demographics, FeatureError, FEATURE_NAMES};
use crate::model::metrics::{self, EvalMetrics};
use crate::model::{
    aggregate_class_probs, aggregate_patient, train_forest_with_classes, Aggregation, Forest,
    ForestConfig, ModelError, Prediction,
};
use crate::rng::SplitMix64;
use crate::segmentation::{
    self, Annotation, GridSearchResult, ParamGrid, Segment, SegmentationError, SegmentationParams,
    SegmentationScore, DEFAULT_MASK_RESOLUTION_HZ,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Name of the extra model input holding the patient's swallow count.
pub const SWALLOW_COUNT_FEATURE: &str = "swallow_count";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Audio {
        path: String,
        #[source]
        source: AudioError,
    },
    #[error("{path}: {source}")]
    Segmentation {
        path: String,
        #[source]
        source: SegmentationError,
    },
    #[error("{path} segment [{start_s}, {end_s}): {source}")]
    Feature {
        path: String,
        start_s: f64,
        end_s: f64,
        #[source]
        source: FeatureError,
    },
    #[error("{0} has no annotation_path, required in human mode")]
    MissingAnnotation(String),
    #[error("patient {patient_id}: PAS {pas} has no class")]
    Unlabelled { patient_id: String, pas: u8 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("split {split}: {source}")]
    Model {
        split: usize,
        #[source]
        source: ModelError,
    },
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegMode {
    /// Use the annotated swallow extents.
    Human,
    /// Fixed-parameter silence detection.
    Fixed,
    /// Overlapping windows over the whole recording.
    Sliding,
}

impl FromStr for SegMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(SegMode::Human),
            "fixed" => Ok(SegMode::Fixed),
            "sliding" => Ok(SegMode::Sliding),
            other => Err(format!("unknown segmentation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingConfig {
    pub window_s: f64,
    pub overlap: f64,
}

impl Default for SlidingConfig {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSetup {
    pub mode: SegMode,
    /// Used in fixed mode for recordings without their own overrides.
    pub params: SegmentationParams,
    pub sliding: SlidingConfig,
}

impl Default for SegmentationSetup {
    fn default() -> Self {
        Self {
            mode: SegMode::Fixed,
            params: SegmentationParams::default(),
            sliding: SlidingConfig::default(),
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn load_clip(rec: &Recording) -> Result<AudioClip, PipelineError> {
    audio_io::read_wav_file(&rec.wav_path).map_err(|source| PipelineError::Audio {
        path: display(&rec.wav_path),
        source,
    })
}

fn read_annotation(rec: &Recording) -> Result<Option<Annotation>, PipelineError> {
    rec.annotation_path
        .as_ref()
        .map(|p| {
            Annotation::read(p).map_err(|source| PipelineError::Segmentation {
                path: display(p),
                source,
            })
        })
        .transpose()
}

/// Swallow segments of one recording under `setup`.
pub fn segment_recording(
    rec: &Recording,
    clip: &AudioClip,
    setup: &SegmentationSetup,
) -> Result<Vec<Segment>, PipelineError> {
    let seg_err = |source| PipelineError::Segmentation {
        path: display(&rec.wav_path),
        source,
    };
    match setup.mode {
        SegMode::Human => {
            let ann = read_annotation(rec)?
                .ok_or_else(|| PipelineError::MissingAnnotation(display(&rec.wav_path)))?;
            Ok(ann.segments)
        }
        SegMode::Fixed => {
            let params = rec.params.unwrap_or(setup.params);
            segmentation::detect_segments(clip, &params).map_err(seg_err)
        }
        SegMode::Sliding => {
            segmentation::sliding_windows(clip, setup.sliding.window_s, setup.sliding.overlap)
                .map_err(seg_err)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingSegments {
    pub patient_id: String,
    pub wav_path: String,
    pub duration_s: f64,
    pub segments: Vec<Segment>,
    /// Agreement with the annotation, when one is available.
    pub score: Option<SegmentationScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub setup: SegmentationSetup,
    pub recordings: Vec<RecordingSegments>,
    /// Mean over annotated recordings.
    pub mean_score: Option<SegmentationScore>,
}

/// Segments every recording and scores it against its annotation if present.
pub fn segment_cohort(
    patients: &[PatientRecord],
    setup: &SegmentationSetup,
) -> Result<SegmentReport, PipelineError> {
    let jobs: Vec<(&PatientRecord, &Recording)> = patients
        .iter()
        .flat_map(|p| p.recordings.iter().map(move |r| (p, r)))
        .collect();
    let recordings = jobs
        .par_iter()
        .map(|(p, rec)| {
            let clip = load_clip(rec)?;
            let segments = segment_recording(rec, &clip, setup)?;
            let score = match read_annotation(rec)? {
                None => None,
                Some(ann) => Some(
                    score_against(&segments, &ann.segments, clip.duration_s()).map_err(
                        |source| PipelineError::Segmentation {
                            path: display(&rec.wav_path),
                            source,
                        },
                    )?,
                ),
            };
            Ok(RecordingSegments {
                patient_id: p.patient_id.clone(),
                wav_path: display(&rec.wav_path),
                duration_s: clip.duration_s(),
                segments,
                score,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let scored: Vec<&SegmentationScore> =
        recordings.iter().filter_map(|r| r.score.as_ref()).collect();
    let mean_score = (!scored.is_empty()).then(|| {
        let n = scored.len() as f64;
        SegmentationScore {
            iou: scored.iter().map(|s| s.iou).sum::<f64>() / n,
            sensitivity: scored.iter().map(|s| s.sensitivity).sum::<f64>() / n,
            specificity: scored.iter().map(|s| s.specificity).sum::<f64>() / n,
        }
    });
    Ok(SegmentReport {
        setup: *setup,
        recordings,
        mean_score,
    })
}

/// Mask-level agreement of `predicted` with `truth` over `[0, duration_s]`.
pub fn score_against(
    predicted: &[Segment],
    truth: &[Segment],
    duration_s: f64,
) -> Result<SegmentationScore, SegmentationError> {
    let res = DEFAULT_MASK_RESOLUTION_HZ;
    let p = segmentation::segments_to_mask(predicted, duration_s, res)?;
    let t = segmentation::segments_to_mask(truth, duration_s, res)?;
    segmentation::score_segmentation(&p, &t)
}

/// Grid search over every annotated recording in the manifest.
pub fn gridsearch(
    patients: &[PatientRecord],
    grid: &ParamGrid,
) -> Result<GridSearchResult, PipelineError> {
    let recs: Vec<&Recording> = patients.iter().flat_map(|p| &p.recordings).collect();
    let clips = recs
        .par_iter()
        .map(|rec| {
            let ann = read_annotation(rec)?
                .ok_or_else(|| PipelineError::MissingAnnotation(display(&rec.wav_path)))?;
            let clip = load_clip(rec)?;
            let mask = segmentation::segments_to_mask(
                &ann.segments,
                clip.duration_s(),
                DEFAULT_MASK_RESOLUTION_HZ,
            )
            .map_err(|source| PipelineError::Segmentation {
                path: display(&rec.wav_path),
                source,
            })?;
            Ok((clip, mask))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    segmentation::grid_search_params(&clips, grid, DEFAULT_MASK_RESOLUTION_HZ).map_err(|source| {
        PipelineError::Segmentation {
            path: "grid search".into(),
            source,
        }
    })
}

/// Grid-search table as CSV, one row per evaluated point.
pub fn grid_table_csv(result: &GridSearchResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "top_db",
        "gap_time",
        "min_amplitude",
        "max_amplitude",
        "mean_iou",
        "mean_sensitivity",
        "mean_specificity",
        "best",
    ])
    .expect("in-memory write");
    for p in &result.table {
        let is_best = p.params == result.best.params;
        w.write_record([
            p.params.top_db.to_string(),
            p.params.gap_time.to_string(),
            p.params.min_amplitude.to_string(),
            p.params.max_amplitude.to_string(),
            p.mean_iou.to_string(),
            p.mean_sensitivity.to_string(),
            p.mean_specificity.to_string(),
            is_best.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwallowRow {
    pub patient_id: String,
    pub wav_path: String,
    pub start_s: f64,
    pub end_s: f64,
    /// Values laid out as [`feature_columns`].
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientFeatures {
    pub patient_id: String,
    pub pas: u8,
    pub swallows: Vec<SwallowRow>,
}

/// Model input column names: the swallow features followed by the patient's
/// swallow count.
pub fn feature_columns() -> Vec<String> {
    FEATURE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(std::iter::once(SWALLOW_COUNT_FEATURE.to_string()))
        .collect()
}

/// Segments and featurises every patient; the order of `patients` is kept.
pub fn extract_cohort(
    patients: &[PatientRecord],
    setup: &SegmentationSetup,
) -> Result<Vec<PatientFeatures>, PipelineError> {
    patients
        .par_iter()
        .map(|p| {
            let demo = Demographics {
                age: p.age,
                gender: p.gender,
            };
            let mut swallows = Vec::new();
            for rec in &p.recordings {
                let clip = load_clip(rec)?;
                for seg in segment_recording(rec, &clip, setup)? {
                    let f = features::extract_features(&clip, &seg, demo).map_err(|source| {
                        PipelineError::Feature {
                            path: display(&rec.wav_path),
                            start_s: seg.start_s,
                            end_s: seg.end_s,
                            source,
                        }
                    })?;
                    swallows.push(SwallowRow {
                        patient_id: p.patient_id.clone(),
                        wav_path: display(&rec.wav_path),
                        start_s: seg.start_s,
                        end_s: seg.end_s,
                        features: f.to_vector(),
                    });
                }
            }
            let count = swallows.len() as f64;
            for s in &mut swallows {
                s.features.push(count);
            }
            Ok(PatientFeatures {
                patient_id: p.patient_id.clone(),
                pas: p.pas,
                swallows,
            })
        })
        .collect()
}

/// Feature table as CSV with identifying columns first.
pub fn features_csv(table: &[PatientFeatures]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "patient_id".to_string(),
        "pas".into(),
        "wav_path".into(),
        "start_s".into(),
        "end_s".into(),
    ];
    header.extend(feature_columns());
    w.write_record(&header).expect("in-memory write");
    for p in table {
        for s in &p.swallows {
            let mut row = vec![
                p.patient_id.clone(),
                p.pas.to_string(),
                s.wav_path.clone(),
                s.start_s.to_string(),
                s.end_s.to_string(),
            ];
            row.extend(s.features.iter().map(|v| v.to_string()));
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

fn patient_class(p: &PatientFeatures, scheme: LabelScheme) -> Result<usize, PipelineError> {
    scheme
        .label(p.pas)
        .ok_or_else(|| PipelineError::Unlabelled {
            patient_id: p.patient_id.clone(),
            pas: p.pas,
        })
}

/// Fits a forest on every swallow of the given patients.
pub fn train_on(
    table: &[PatientFeatures],
    scheme: LabelScheme,
    cfg: &ForestConfig,
) -> Result<Forest, PipelineError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in table {
        let class = patient_class(p, scheme)?;
        for s in &p.swallows {
            x.push(s.features.clone());
            y.push(class);
        }
    }
    train_forest_with_classes(&x, &y, scheme.n_classes(), cfg)
        .map_err(|source| PipelineError::Model { split: 0, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub segmentation: SegmentationSetup,
    pub label_scheme: LabelScheme,
    /// Strategy highlighted in the rendered summary; all three are computed.
    pub aggregation: Aggregation,
    pub splits: SplitConfig,
    pub forest: ForestConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationSetup::default(),
            label_scheme: LabelScheme::Abnormality,
            aggregation: Aggregation::Mean,
            splits: SplitConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub patient_id: String,
    pub label: usize,
    pub n_swallows: usize,
    /// Risk score per strategy.
    pub scores: BTreeMap<Aggregation, f64>,
    /// Predicted class per strategy.
    pub classes: BTreeMap<Aggregation, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub index: usize,
    pub n_train_patients: usize,
    pub n_train_swallows: usize,
    pub n_test_swallows: usize,
    pub test_patients: Vec<PatientOutcome>,
    pub patient_metrics: BTreeMap<Aggregation, EvalMetrics>,
    /// Per-swallow metrics; only computed for human segmentation.
    pub swallow_metrics: Option<EvalMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over splits.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc_roc: MeanStd,
    pub auc_prc: MeanStd,
    pub balanced_accuracy: MeanStd,
}

impl MetricSummary {
    fn of(ms: &[EvalMetrics]) -> Self {
        let col = |f: fn(&EvalMetrics) -> f64| MeanStd::of(&ms.iter().map(f).collect::<Vec<_>>());
        Self {
            auc_roc: col(|m| m.auc_roc),
            auc_prc: col(|m| m.auc_prc),
            balanced_accuracy: col(|m| m.balanced_accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub patient: BTreeMap<Aggregation, MetricSummary>,
    pub swallow: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub config: EvalConfig,
    pub seed: u64,
    pub feature_columns: Vec<String>,
    pub n_patients: usize,
    pub n_swallows: usize,
    pub plan: SplitPlan,
    pub splits: Vec<SplitReport>,
    pub summary: EvalSummary,
    pub provenance: Vec<String>,
}

/// Clinical reference figures that cannot be reproduced without the original
/// private recordings. Reported for context only.
pub const PROVENANCE_NOTES: [&str; 4] = [
    "Metrics are computed on the supplied manifest only.",
    "Reference clinical result, not reproducible here: swallow-level abnormality AUC-ROC 0.904 +/- 0.015 with domain features.",
    "Reference clinical result, not reproducible here: patient-level AUC-ROC 0.942 +/- 0.051 with fixed-parameter segmentation and max aggregation.",
    "Reference clinical result, not reproducible here: segmentation optimum top_db 20, gap_time 0.6, min 0, max 2 with IoU 0.4775, sensitivity 65.8%, specificity 87.6%.",
];

/// Fallback when a test patient yields no swallow segments: maximally
/// uncertain score, flagged as at risk.
const NO_SWALLOW_SCORE: f64 = 0.5;
const NO_SWALLOW_CLASS: usize = 1;

/// Per-strategy patient scores, class probability vectors and predicted classes.
type StrategyColumns = (Vec<f64>, Vec<Vec<f64>>, Vec<usize>);

fn patient_probs(
    preds: &[Prediction],
    strategy: Aggregation,
    n_classes: usize,
) -> Result<Vec<f64>, ModelError> {
    if preds.is_empty() {
        Ok(vec![1.0 / n_classes as f64; n_classes])
    } else {
        aggregate_class_probs(preds, strategy)
    }
}

/// Repeated patient-level train/test evaluation.
///
/// Features are extracted once. For each split a forest is trained on the
/// training patients' swallows, test swallows are scored, and the scores are
/// aggregated per patient with every strategy. A supplied `plan` replaces the
/// seeded splits; any patient on both sides of a split aborts with a panic.
pub fn evaluate(
    patients: &[PatientRecord],
    cfg: &EvalConfig,
    plan: Option<SplitPlan>,
) -> Result<EvalReport, PipelineError> {
    cfg.forest
        .validate()
        .map_err(|source| PipelineError::Model { split: 0, source })?;
    let table = extract_cohort(patients, &cfg.segmentation)?;
    evaluate_table(&table, cfg, plan)
}

/// [`evaluate`] on an already extracted feature table.
pub fn evaluate_table(
    table: &[PatientFeatures],
    cfg: &EvalConfig,
    plan: Option<SplitPlan>,
) -> Result<EvalReport, PipelineError> {
    let scheme = cfg.label_scheme;
    let n_classes = scheme.n_classes();
    let classes = table
        .iter()
        .map(|p| patient_class(p, scheme))
        .collect::<Result<Vec<_>, _>>()?;
    let units: Vec<PatientUnit> = table
        .iter()
        .zip(&classes)
        .map(|(p, &class)| PatientUnit {
            patient_id: p.patient_id.clone(),
            class,
            swallow_count: p.swallows.len(),
        })
        .collect();
    let plan = match plan {
        Some(plan) => plan,
        None => make_splits(&units, &cfg.splits)?,
    };
    plan.assert_no_leakage();
    let ids: Vec<String> = units.iter().map(|u| u.patient_id.clone()).collect();
    plan.check_coverage(&ids)?;

    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let splits = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(s, split)| {
            let model_err = |source| PipelineError::Model { split: s, source };
            let mut x = Vec::new();
            let mut y = Vec::new();
            for id in &split.train {
                let i = index[id.as_str()];
                for row in &table[i].swallows {
                    x.push(row.features.clone());
                    y.push(classes[i]);
                }
            }
            let forest_cfg = ForestConfig {
                seed: SplitMix64::derive(cfg.forest.seed, s as u64).next_u64(),
                ..cfg.forest
            };
            let forest =
                train_forest_with_classes(&x, &y, n_classes, &forest_cfg).map_err(model_err)?;

            let mut outcomes = Vec::with_capacity(split.test.len());
            let mut swallow_probs = Vec::new();
            let mut swallow_pred = Vec::new();
            let mut swallow_labels = Vec::new();
            let mut per_strategy: BTreeMap<Aggregation, StrategyColumns> = BTreeMap::new();
            let mut labels = Vec::with_capacity(split.test.len());
            for id in &split.test {
                let i = index[id.as_str()];
                let rows: Vec<Vec<f64>> = table[i]
                    .swallows
                    .iter()
                    .map(|r| r.features.clone())
                    .collect();
                let preds = forest.predict_many(&rows).map_err(model_err)?;
                for p in &preds {
                    swallow_probs.push(p.class_probs.clone());
                    swallow_pred.push(p.predicted_class);
                    swallow_labels.push(classes[i]);
                }
                let mut scores = BTreeMap::new();
                let mut pclasses = BTreeMap::new();
                for strategy in Aggregation::ALL {
                    let (score, class) = if preds.is_empty() {
                        (NO_SWALLOW_SCORE, NO_SWALLOW_CLASS)
                    } else {
                        let ps = aggregate_patient(&preds, strategy).map_err(model_err)?;
                        (ps.score, ps.class)
                    };
                    let probs = patient_probs(&preds, strategy, n_classes).map_err(model_err)?;
                    let class =
                        if n_classes == 2 || strategy == Aggregation::Mode || preds.is_empty() {
                            class
                        } else {
                            Prediction::from_probs(probs.clone()).predicted_class
                        };
                    let entry = per_strategy.entry(strategy).or_default();
                    entry.0.push(score);
                    entry.1.push(probs);
                    entry.2.push(class);
                    scores.insert(strategy, score);
                    pclasses.insert(strategy, class);
                }
                labels.push(classes[i]);
                outcomes.push(PatientOutcome {
                    patient_id: id.clone(),
                    label: classes[i],
                    n_swallows: preds.len(),
                    scores,
                    classes: pclasses,
                });
            }

            let mut patient_metrics = BTreeMap::new();
            for (strategy, (scores, probs, predicted)) in &per_strategy {
                let m = if n_classes == 2 {
                    let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                    EvalMetrics {
                        auc_roc: metrics::auc_roc(scores, &positive)
                            .map_err(|e| model_err(e.into()))?,
                        auc_prc: metrics::auc_prc(scores, &positive)
                            .map_err(|e| model_err(e.into()))?,
                        balanced_accuracy: metrics::balanced_accuracy(
                            predicted, &labels, n_classes,
                        )
                        .map_err(|e| model_err(e.into()))?,
                    }
                } else {
                    metrics::evaluate_probs(probs, predicted, &labels, n_classes)
                        .map_err(|e| model_err(e.into()))?
                };
                patient_metrics.insert(*strategy, m);
            }
            let swallow_metrics = if cfg.segmentation.mode == SegMode::Human {
                Some(
                    metrics::evaluate_probs(
                        &swallow_probs,
                        &swallow_pred,
                        &swallow_labels,
                        n_classes,
                    )
                    .map_err(|e| model_err(e.into()))?,
                )
            } else {
                None
            };
            Ok(SplitReport {
                index: s,
                n_train_patients: split.train.len(),
                n_train_swallows: x.len(),
                n_test_swallows: swallow_labels.len(),
                test_patients: outcomes,
                patient_metrics,
                swallow_metrics,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let patient = Aggregation::ALL
        .iter()
        .map(|&a| {
            let ms: Vec<EvalMetrics> = splits.iter().map(|s| s.patient_metrics[&a]).collect();
            (a, MetricSummary::of(&ms))
        })
        .collect();
    let swallow = if cfg.segmentation.mode == SegMode::Human {
        let ms: Vec<EvalMetrics> = splits.iter().filter_map(|s| s.swallow_metrics).collect();
        Some(MetricSummary::of(&ms))
    } else {
        None
    };

    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        config: cfg.clone(),
        seed: cfg.splits.seed,
        feature_columns: feature_columns(),
        n_patients: table.len(),
        n_swallows: table.iter().map(|p| p.swallows.len()).sum(),
        plan,
        splits,
        summary: EvalSummary { patient, swallow },
        provenance: PROVENANCE_NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Input(format!("report: {e}")))
    }

    /// Human-readable summary table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(
            out,
            "patients {}  swallows {}  splits {}  mode {:?}  scheme {:?}  seed {}",
            self.n_patients,
            self.n_swallows,
            self.splits.len(),
            c.segmentation.mode,
            c.label_scheme,
            self.seed
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:>17} {:>17} {:>17}",
            "level", "AUC-ROC", "AUC-PRC", "balanced acc"
        );
        let cell = |m: MeanStd| format!("{:.3} +/- {:.3}", m.mean, m.std);
        let row = |out: &mut String, name: String, s: &MetricSummary| {
            let _ = writeln!(
                out,
                "{:<16} {:>17} {:>17} {:>17}",
                name,
                cell(s.auc_roc),
                cell(s.auc_prc),
                cell(s.balanced_accuracy)
            );
        };
        if let Some(s) = &self.summary.swallow {
            row(&mut out, "swallow".into(), s);
        }
        for (a, s) in &self.summary.patient {
            let mark = if *a == c.aggregation { "*" } else { "" };
            row(&mut out, format!("patient/{a}{mark}"), s);
        }
        out
    }
}

/// Reads a split plan written as JSON.
pub fn read_split_plan(path: &Path) -> Result<SplitPlan, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", display(path))))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", display(path))))
}

/// Ensures `dir` exists and returns `dir/name`.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", display(dir))))?;
    Ok(dir.join(name))
}
