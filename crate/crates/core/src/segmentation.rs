//! Swallow event localisation and segmentation scoring.
//!
//! Fixed-parameter segmentation runs four stages over a clip:
//!
//! 1. a centered RMS envelope (2048-sample frames, 512 hop) is converted to dB
//!    relative to the clip's loudest frame, and frames louder than `-top_db`
//!    form candidate runs;
//! 2. candidates separated by less than `gap_time` seconds are merged;
//! 3. candidates whose peak absolute sample is below `min_amplitude` are dropped;
//! 4. candidates whose peak absolute sample is above `max_amplitude` are dropped.
//!
//! Sliding-window segmentation instead tiles the clip with fixed windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::audio_io::AudioClip;
use crate::dsp::{self, DspError};

pub const ENVELOPE_FRAME: usize = 2048;
pub const ENVELOPE_HOP: usize = 512;
/// Mask cells per second used when scoring segmentations.
pub const DEFAULT_MASK_RESOLUTION_HZ: u32 = 100;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SegmentationError {
    #[error("invalid segmentation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid segment [{start_s}, {end_s})")]
    InvalidSegment { start_s: f64, end_s: f64 },
    #[error("segment [{start_s}, {end_s}) lies outside [0, {duration_s}]")]
    SegmentOutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("mask length mismatch: predicted {predicted}, truth {truth}")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("masks must contain at least one cell")]
    EmptyMask,
    #[error("invalid sliding window: window_s={window_s}, overlap={overlap}")]
    InvalidWindow { window_s: f64, overlap: f64 },
    #[error("parameter grid is empty or has no valid combination")]
    EmptyGrid,
    #[error("grid search needs at least one annotated clip")]
    NoClips,
    #[error("annotation {path}: {message}")]
    Annotation { path: String, message: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// The four thresholds that drive fixed-parameter segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// dB below the loudest frame that counts as silence.
    pub top_db: f64,
    /// Candidates closer than this (seconds) are merged.
    pub gap_time: f64,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
}

impl Default for SegmentationParams {
    /// The overlap-maximising combination found on the clinical cohort.
    fn default() -> Self {
        Self {
            top_db: 20.0,
            gap_time: 0.6,
            min_amplitude: 0.0,
            max_amplitude: 2.0,
        }
    }
}

impl SegmentationParams {
    pub fn new(
        top_db: f64,
        gap_time: f64,
        min_amplitude: f64,
        max_amplitude: f64,
    ) -> Result<Self, SegmentationError> {
        let p = Self {
            top_db,
            gap_time,
            min_amplitude,
            max_amplitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.top_db > 0.0 && self.top_db.is_finite()) {
            return Err(SegmentationError::InvalidParams(format!(
                "top_db must be positive, got {}",
                self.top_db
            )));
        }
        if !(self.gap_time >= 0.0 && self.gap_time.is_finite()) {
            return Err(SegmentationError::InvalidParams(format!(
                "gap_time must be non-negative, got {}",
                self.gap_time
            )));
        }
        if !(0.0 <= self.min_amplitude && self.min_amplitude < self.max_amplitude) {
            return Err(SegmentationError::InvalidParams(format!(
                "need 0 <= min_amplitude < max_amplitude, got {} and {}",
                self.min_amplitude, self.max_amplitude
            )));
        }
        Ok(())
    }
}

/// A half-open time interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, SegmentationError> {
        if !(start_s >= 0.0 && start_s < end_s && end_s.is_finite()) {
            return Err(SegmentationError::InvalidSegment { start_s, end_s });
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Sample index range `[start, end)` at `sample_rate`, clipped to `len`.
    pub fn sample_range(&self, sample_rate: u32, len: usize) -> std::ops::Range<usize> {
        let sr = sample_rate as f64;
        let start = ((self.start_s * sr).round() as usize).min(len);
        let end = ((self.end_s * sr).round() as usize).min(len);
        start..end.max(start)
    }
}

/// Overlap, hit rate and rejection rate of a predicted mask against truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub iou: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Ground-truth annotation file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub source_id: String,
    pub segments: Vec<Segment>,
}

impl Annotation {
    pub fn read(path: &Path) -> Result<Self, SegmentationError> {
        let err = |message: String| SegmentationError::Annotation {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ann: Annotation = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        for s in &ann.segments {
            Segment::new(s.start_s, s.end_s).map_err(|e| err(e.to_string()))?;
        }
        Ok(ann)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }
}

/// Precomputed dB envelope of a clip, reusable across parameter settings.
#[derive(Debug, Clone)]
pub struct Envelope {
    db: Vec<f64>,
    sample_rate: u32,
    len: usize,
}

impl Envelope {
    pub fn new(clip: &AudioClip) -> Result<Self, SegmentationError> {
        let frames = dsp::frame_rms(clip, ENVELOPE_FRAME, ENVELOPE_HOP)?;
        let rms: Vec<f64> = frames.iter().map(|f| f.rms).collect();
        let peak = rms.iter().cloned().fold(0.0, f64::max);
        let db = if peak > 0.0 {
            dsp::amplitude_to_db(&rms, peak)?
        } else {
            // digital silence: nothing rises above any threshold
            vec![f64::NEG_INFINITY; rms.len()]
        };
        Ok(Self {
            db,
            sample_rate: clip.sample_rate(),
            len: clip.len(),
        })
    }

    /// Contiguous runs of frames louder than `-top_db`, as time intervals.
    /// Run boundaries are frame positions `frame * hop`, clipped to the clip.
    pub fn non_silent(&self, top_db: f64) -> Vec<Segment> {
        let sr = self.sample_rate as f64;
        let mut out = Vec::new();
        let mut run_start: Option<usize> = None;
        for i in 0..=self.db.len() {
            let loud = i < self.db.len() && self.db[i] > -top_db;
            match (loud, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    let a = (s * ENVELOPE_HOP).min(self.len);
                    let b = (i * ENVELOPE_HOP).min(self.len);
                    if b > a {
                        out.push(Segment {
                            start_s: a as f64 / sr,
                            end_s: b as f64 / sr,
                        });
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        out
    }
}

/// Non-silent intervals of a clip (stage 1 only).
pub fn non_silent_intervals(
    clip: &AudioClip,
    top_db: f64,
) -> Result<Vec<Segment>, SegmentationError> {
    Ok(Envelope::new(clip)?.non_silent(top_db))
}

/// Merges sorted segments whose gap is strictly less than `gap_time`.
pub fn merge_close(segments: &[Segment], gap_time: f64) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for &seg in segments {
        match out.last_mut() {
            Some(prev) if seg.start_s - prev.end_s < gap_time => {
                prev.end_s = prev.end_s.max(seg.end_s);
            }
            _ => out.push(seg),
        }
    }
    out
}

/// Largest absolute sample inside a segment; zero for an empty range.
pub fn peak_amplitude(clip: &AudioClip, seg: &Segment) -> f64 {
    clip.samples()[seg.sample_range(clip.sample_rate(), clip.len())]
        .iter()
        .fold(0.0, |m, s| m.max(s.abs()))
}

fn detect_with_envelope(
    clip: &AudioClip,
    env: &Envelope,
    params: &SegmentationParams,
) -> Vec<Segment> {
    let merged = merge_close(&env.non_silent(params.top_db), params.gap_time);
    merged
        .into_iter()
        .filter(|seg| {
            let peak = peak_amplitude(clip, seg);
            peak >= params.min_amplitude && peak <= params.max_amplitude
        })
        .collect()
}

/// Fixed-parameter swallow detection. An empty result means no swallows.
pub fn detect_segments(
    clip: &AudioClip,
    params: &SegmentationParams,
) -> Result<Vec<Segment>, SegmentationError> {
    params.validate()?;
    let env = Envelope::new(clip)?;
    Ok(detect_with_envelope(clip, &env, params))
}

/// Tiles `[0, duration_s]` with windows of `window_s` at stride
/// `window_s * (1 - overlap)`. A partial remainder gets one extra window
/// aligned to the end; a clip shorter than one window yields `[0, duration]`.
pub fn sliding_windows_for_duration(
    duration_s: f64,
    window_s: f64,
    overlap: f64,
) -> Result<Vec<Segment>, SegmentationError> {
    if !(window_s > 0.0 && window_s.is_finite() && (0.0..1.0).contains(&overlap)) {
        return Err(SegmentationError::InvalidWindow { window_s, overlap });
    }
    if !(duration_s > 0.0) {
        return Err(SegmentationError::InvalidSegment {
            start_s: 0.0,
            end_s: duration_s,
        });
    }
    if duration_s < window_s - TIME_EPS {
        return Ok(vec![Segment {
            start_s: 0.0,
            end_s: duration_s,
        }]);
    }
    let stride = window_s * (1.0 - overlap);
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * stride;
        if start + window_s > duration_s + TIME_EPS {
            break;
        }
        out.push(Segment {
            start_s: start,
            end_s: start + window_s,
        });
        k += 1;
    }
    let last_end = out.last().map_or(0.0, |s| s.end_s);
    if last_end < duration_s - TIME_EPS {
        out.push(Segment {
            start_s: duration_s - window_s,
            end_s: duration_s,
        });
    }
    Ok(out)
}

pub fn sliding_windows(
    clip: &AudioClip,
    window_s: f64,
    overlap: f64,
) -> Result<Vec<Segment>, SegmentationError> {
    sliding_windows_for_duration(clip.duration_s(), window_s, overlap)
}

/// Rasterises segments onto `ceil(duration * resolution)` cells; a cell is
/// set when its center falls inside a segment.
pub fn segments_to_mask(
    segments: &[Segment],
    duration_s: f64,
    resolution_hz: u32,
) -> Result<Vec<bool>, SegmentationError> {
    for s in segments {
        if s.start_s < 0.0 || s.end_s > duration_s + TIME_EPS || s.start_s >= s.end_s {
            return Err(SegmentationError::SegmentOutOfRange {
                start_s: s.start_s,
                end_s: s.end_s,
                duration_s,
            });
        }
    }
    let res = resolution_hz as f64;
    let n = (duration_s * res - TIME_EPS).ceil().max(0.0) as usize;
    let mut mask = vec![false; n];
    for s in segments {
        // first cell with center >= start, first cell with center >= end
        let first = ((s.start_s * res - 0.5).ceil().max(0.0)) as usize;
        let last = ((s.end_s * res - 0.5).ceil().max(0.0)) as usize;
        for cell in mask.iter_mut().take(last.min(n)).skip(first) {
            *cell = true;
        }
    }
    Ok(mask)
}

/// Ratio with an empty denominator reported as 1.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn score_segmentation(
    predicted: &[bool],
    truth: &[bool],
) -> Result<SegmentationScore, SegmentationError> {
    if predicted.len() != truth.len() {
        return Err(SegmentationError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(SegmentationError::EmptyMask);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(SegmentationScore {
        iou: ratio(tp, tp + fp + fn_),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

/// Candidate values per parameter; combinations are enumerated with
/// `top_db` outermost and `max_amplitude` innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub top_db: Vec<f64>,
    pub gap_time: Vec<f64>,
    pub min_amplitude: Vec<f64>,
    pub max_amplitude: Vec<f64>,
}

impl ParamGrid {
    pub fn single(p: SegmentationParams) -> Self {
        Self {
            top_db: vec![p.top_db],
            gap_time: vec![p.gap_time],
            min_amplitude: vec![p.min_amplitude],
            max_amplitude: vec![p.max_amplitude],
        }
    }

    /// All combinations in declaration order, including invalid ones.
    pub fn combinations(&self) -> Vec<SegmentationParams> {
        let mut out = Vec::new();
        for &top_db in &self.top_db {
            for &gap_time in &self.gap_time {
                for &min_amplitude in &self.min_amplitude {
                    for &max_amplitude in &self.max_amplitude {
                        out.push(SegmentationParams {
                            top_db,
                            gap_time,
                            min_amplitude,
                            max_amplitude,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub params: SegmentationParams,
    pub mean_iou: f64,
    pub mean_sensitivity: f64,
    pub mean_specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub best: GridPoint,
    /// Every valid grid point in declaration order.
    pub table: Vec<GridPoint>,
}

/// True when `a` should replace `b` as the grid-search winner.
fn beats(a: &GridPoint, b: &GridPoint) -> bool {
    if a.mean_iou != b.mean_iou {
        return a.mean_iou > b.mean_iou;
    }
    if a.params.top_db != b.params.top_db {
        return a.params.top_db > b.params.top_db;
    }
    // remaining ties keep the earlier declaration
    a.params.gap_time < b.params.gap_time
}

/// Exhaustive search for the parameters maximising mean IoU over `clips`.
///
/// Truth masks must be at `resolution_hz` and span each clip's duration.
/// Grid points are scored in parallel and reduced in declaration order, so
/// the result does not depend on scheduling.
pub fn grid_search_params(
    clips: &[(AudioClip, Vec<bool>)],
    grid: &ParamGrid,
    resolution_hz: u32,
) -> Result<GridSearchResult, SegmentationError> {
    if clips.is_empty() {
        return Err(SegmentationError::NoClips);
    }
    let points: Vec<SegmentationParams> = grid
        .combinations()
        .into_iter()
        .filter(|p| p.validate().is_ok())
        .collect();
    if points.is_empty() {
        return Err(SegmentationError::EmptyGrid);
    }
    let envelopes = clips
        .par_iter()
        .map(|(clip, _)| Envelope::new(clip))
        .collect::<Result<Vec<_>, _>>()?;

    let table = points
        .par_iter()
        .map(|params| {
            let mut sums = [0.0; 3];
            for ((clip, truth), env) in clips.iter().zip(&envelopes) {
                let segs = detect_with_envelope(clip, env, params);
                let mask = segments_to_mask(&segs, clip.duration_s(), resolution_hz)?;
                let score = score_segmentation(&mask, truth)?;
                sums[0] += score.iou;
                sums[1] += score.sensitivity;
                sums[2] += score.specificity;
            }
            let n = clips.len() as f64;
            Ok(GridPoint {
                params: *params,
                mean_iou: sums[0] / n,
                mean_sensitivity: sums[1] / n,
                mean_specificity: sums[2] / n,
            })
        })
        .collect::<Result<Vec<_>, SegmentationError>>()?;

    let mut best = &table[0];
    for p in &table[1..] {
        if beats(p, best) {
            best = p;
        }
    }
    Ok(GridSearchResult {
        best: best.clone(),
        table,
    })
}
