//! Domain-informed acoustic features for a single swallow segment.
//!
//! Per segment the extractor reports the five most salient STFT frequencies,
//! the mean and median spectral centroid over time, peak and mean absolute
//! amplitude, and the trapezoidal area under the absolute waveform. Age and
//! gender ride along so the model sees them next to the acoustics.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::audio_io::AudioClip;
use crate::dsp::{self, DspError, Spectrogram};
use crate::segmentation::Segment;

pub const TOP_K: usize = 5;

/// Column names of [`SwallowFeatures::to_vector`], in order.
pub const FEATURE_NAMES: [&str; 12] = [
    "freq_1",
    "freq_2",
    "freq_3",
    "freq_4",
    "freq_5",
    "mean_freq",
    "median_freq",
    "peak_amp",
    "avg_amp",
    "auc",
    "age",
    "gender",
];

/// Centroid-derived frequencies are reported on a 1 mHz grid so that
/// last-ulp differences in the FFT never leak into the feature values.
const FREQ_RESOLUTION_HZ: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("spectrogram has {bins} bins, need at least {k}")]
    TooFewBins { bins: usize, k: usize },
    #[error("spectrogram is empty")]
    EmptySpectrogram,
    #[error("segment has no samples")]
    EmptySegment,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("segment [{start_s}, {end_s}) outside clip of {duration_s} s")]
    SegmentOutOfBounds {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("invalid demographics: {0}")]
    InvalidDemographics(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn code(self) -> f64 {
        match self {
            Gender::Female => 0.0,
            Gender::Male => 1.0,
        }
    }
}

impl FromStr for Gender {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" | "0" => Ok(Gender::Female),
            "male" | "m" | "1" => Ok(Gender::Male),
            other => Err(FeatureError::InvalidDemographics(format!(
                "unknown gender {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: f64,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwallowFeatures {
    /// Most salient frequencies in Hz, most salient first.
    pub top_freqs: [f64; TOP_K],
    pub mean_freq: f64,
    pub median_freq: f64,
    pub peak_amp: f64,
    pub avg_amp: f64,
    /// Trapezoidal integral of |x(t)| in amplitude-seconds.
    pub auc: f64,
    pub duration_s: f64,
    pub age: f64,
    pub gender: Gender,
}

impl SwallowFeatures {
    /// Model input vector laid out as [`FEATURE_NAMES`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_NAMES.len());
        v.extend_from_slice(&self.top_freqs);
        v.extend_from_slice(&[
            self.mean_freq,
            self.median_freq,
            self.peak_amp,
            self.avg_amp,
            self.auc,
            self.age,
            self.gender.code(),
        ]);
        v
    }
}

/// Centre frequencies of the `k` bins with the highest mean magnitude.
/// Ties go to the lower frequency.
pub fn top_k_frequencies(spec: &Spectrogram, k: usize) -> Result<Vec<f64>, FeatureError> {
    if spec.n_bins() < k {
        return Err(FeatureError::TooFewBins {
            bins: spec.n_bins(),
            k,
        });
    }
    let n_frames = spec.n_frames() as f64;
    let salience: Vec<f64> = (0..spec.n_bins())
        .map(|b| spec.bin_row(b).iter().sum::<f64>() / n_frames)
        .collect();
    let mut order: Vec<usize> = (0..spec.n_bins()).collect();
    order.sort_by(|&a, &b| salience[b].total_cmp(&salience[a]).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&b| spec.bin_freqs()[b]).collect())
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Per-frame spectral centroids; an all-zero frame has centroid 0.
pub fn frame_centroids(spec: &Spectrogram) -> Vec<f64> {
    (0..spec.n_frames())
        .map(|t| {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, f) in spec.bin_freqs().iter().enumerate() {
                let m = spec.magnitude(k, t);
                num += f * m;
                den += m;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

/// `(mean, median)` of per-frame centroids.
pub fn centroid_stats(centroids: &[f64]) -> Option<(f64, f64)> {
    let med = median(centroids)?;
    let mean = centroids.iter().sum::<f64>() / centroids.len() as f64;
    Some((mean, med))
}

fn snap_frequency(f: f64) -> f64 {
    (f / FREQ_RESOLUTION_HZ).round() * FREQ_RESOLUTION_HZ
}

/// Time-mean and time-median of the spectral centroid.
pub fn mean_median_frequency(spec: &Spectrogram) -> Result<(f64, f64), FeatureError> {
    if spec.n_frames() == 0 || spec.n_bins() == 0 {
        return Err(FeatureError::EmptySpectrogram);
    }
    let (mean, med) =
        centroid_stats(&frame_centroids(spec)).ok_or(FeatureError::EmptySpectrogram)?;
    Ok((snap_frequency(mean), snap_frequency(med)))
}

/// `(max |s|, mean |s|)`.
pub fn amplitude_stats(samples: &[f64]) -> Result<(f64, f64), FeatureError> {
    if samples.is_empty() {
        return Err(FeatureError::EmptySegment);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let avg = samples.iter().map(|s| s.abs()).sum::<f64>() / samples.len() as f64;
    Ok((peak, avg))
}

/// Composite trapezoid of `|s|` with spacing `1 / sample_rate`.
pub fn area_under_curve(samples: &[f64], sample_rate: u32) -> Result<f64, FeatureError> {
    let n = samples.len();
    if n < 2 {
        return Err(FeatureError::TooFewSamples(n));
    }
    let interior: f64 = samples[1..n - 1].iter().map(|s| s.abs()).sum();
    let ends = (samples[0].abs() + samples[n - 1].abs()) / 2.0;
    Ok((ends + interior) / sample_rate as f64)
}

/// Full feature vector for `segment` of `clip`.
pub fn extract_features(
    clip: &AudioClip,
    segment: &Segment,
    demographics: Demographics,
) -> Result<SwallowFeatures, FeatureError> {
    if !(demographics.age > 0.0 && demographics.age.is_finite()) {
        return Err(FeatureError::InvalidDemographics(format!(
            "age {}",
            demographics.age
        )));
    }
    let sr = clip.sample_rate() as f64;
    let start = (segment.start_s * sr).round();
    let end = (segment.end_s * sr).round();
    if segment.start_s < 0.0 || end > clip.len() as f64 || start >= end {
        return Err(FeatureError::SegmentOutOfBounds {
            start_s: segment.start_s,
            end_s: segment.end_s,
            duration_s: clip.duration_s(),
        });
    }
    let samples = &clip.samples()[start as usize..end as usize];
    if samples.len() < 2 {
        return Err(FeatureError::TooFewSamples(samples.len()));
    }

    let spec = dsp::stft_samples(
        samples,
        clip.sample_rate(),
        dsp::DEFAULT_N_FFT,
        dsp::DEFAULT_HOP,
    )?;
    let top = top_k_frequencies(&spec, TOP_K)?;
    let (mean_freq, median_freq) = mean_median_frequency(&spec)?;
    let (peak_amp, avg_amp) = amplitude_stats(samples)?;
    let auc = area_under_curve(samples, clip.sample_rate())?;

    let mut top_freqs = [0.0; TOP_K];
    top_freqs.copy_from_slice(&top);
    Ok(SwallowFeatures {
        top_freqs,
        mean_freq,
        median_freq,
        peak_amp,
        avg_amp,
        auc,
        duration_s: samples.len() as f64 / sr,
        age: demographics.age,
        gender: demographics.gender,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("no row for key ({source_id}, {segment_index})")]
    MissingKey {
        source_id: String,
        segment_index: usize,
    },
    #[error("duplicate row for key ({source_id}, {segment_index})")]
    DuplicateKey {
        source_id: String,
        segment_index: usize,
    },
    #[error("row {row}, column {column:?}: non-numeric cell {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
}

/// Externally computed per-swallow features aligned to a chosen key order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a CSV keyed by `source_id,segment_index` and returns its numeric
/// columns in the order given by `keys`. Non-finite values count as
/// non-numeric.
pub fn import_external_features(
    path: &Path,
    keys: &[(String, usize)],
) -> Result<ExternalFeatures, ImportError> {
    let csv_err = |source| ImportError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "source_id" || &header[1] != "segment_index" {
        return Err(ImportError::HeaderMismatch(
            "expected `source_id,segment_index,<feature columns...>`".into(),
        ));
    }
    let columns: Vec<String> = header.iter().skip(2).map(str::to_owned).collect();

    let mut by_key: HashMap<(String, usize), Vec<f64>> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(csv_err)?;
        if record.len() != header.len() {
            return Err(ImportError::HeaderMismatch(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let source_id = record[0].to_string();
        let segment_index: usize =
            record[1]
                .trim()
                .parse()
                .map_err(|_| ImportError::NonNumericCell {
                    row,
                    column: "segment_index".into(),
                    value: record[1].to_string(),
                })?;
        let values = columns
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let cell = &record[c + 2];
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ImportError::NonNumericCell {
                        row,
                        column: name.clone(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if by_key
            .insert((source_id.clone(), segment_index), values)
            .is_some()
        {
            return Err(ImportError::DuplicateKey {
                source_id,
                segment_index,
            });
        }
    }

    let rows = keys
        .iter()
        .map(|key| {
            by_key.remove(key).ok_or_else(|| ImportError::MissingKey {
                source_id: key.0.clone(),
                segment_index: key.1,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExternalFeatures { columns, rows })
}
