//! Deterministic synthetic cohorts with known swallow extents.
//!
//! Each swallow is white noise band-passed around a class-specific centre
//! frequency, shaped by a tapered-cosine envelope and scaled so its mean
//! absolute amplitude equals a value drawn from the class profile. Bursts sit
//! in a recording separated by silent gaps that carry only a low background
//! noise floor. Abnormal patients get quieter, lower-pitched swallows.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::audio_io::{self, AudioClip, AudioError};
use crate::features::Gender;
use crate::rng::SplitMix64;
use crate::segmentation::{Annotation, Segment};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

/// Inclusive `[lo, hi]` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn overlaps(&self, other: &Range) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    fn sample(&self, rng: &mut SplitMix64) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.uniform(self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    /// Mean absolute sample value of a burst.
    pub amplitude: Range,
    /// Band-pass centre frequency in Hz.
    pub frequency_hz: Range,
    pub duration_s: Range,
    /// Standard deviation of the background noise across the recording.
    pub noise_floor: f64,
}

impl ClassProfile {
    pub fn normal() -> Self {
        Self {
            amplitude: Range::new(0.10, 0.15),
            frequency_hz: Range::new(600.0, 900.0),
            duration_s: Range::new(0.48, 0.80),
            noise_floor: 0.0015,
        }
    }

    pub fn abnormal() -> Self {
        Self {
            amplitude: Range::new(0.035, 0.07),
            frequency_hz: Range::new(300.0, 500.0),
            duration_s: Range::new(0.48, 0.80),
            noise_floor: 0.0015,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separability {
    /// Amplitude ranges of the two classes must not overlap.
    Strict,
    /// Profiles are taken as given.
    Overlapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Inclusive range of swallows per patient.
    pub swallows_per_patient: (usize, usize),
    /// Swallows are spread over recordings holding at most this many.
    pub max_swallows_per_recording: usize,
    pub sample_rate: u32,
    pub abnormal_fraction: f64,
    pub separability: Separability,
    pub normal: ClassProfile,
    pub abnormal: ClassProfile,
    pub lead_silence_s: Range,
    pub gap_s: Range,
    pub trail_silence_s: Range,
    /// Fraction of each burst covered by the cosine ramps (1.0 is a full Hann).
    pub taper_fraction: f64,
    /// Band-pass quality factor.
    pub q: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 20,
            swallows_per_patient: (10, 15),
            max_swallows_per_recording: 4,
            sample_rate: 16_000,
            abnormal_fraction: 0.5,
            separability: Separability::Strict,
            normal: ClassProfile::normal(),
            abnormal: ClassProfile::abnormal(),
            lead_silence_s: Range::new(0.5, 1.0),
            gap_s: Range::new(1.5, 2.0),
            trail_silence_s: Range::new(0.5, 1.0),
            taper_fraction: 0.5,
            q: 5.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_patients == 0 {
            return bad("n_patients must be >= 1".into());
        }
        let (lo, hi) = self.swallows_per_patient;
        if lo == 0 || lo > hi {
            return bad(format!(
                "swallows_per_patient must satisfy 1 <= lo <= hi, got {lo}..{hi}"
            ));
        }
        if self.max_swallows_per_recording == 0 {
            return bad("max_swallows_per_recording must be >= 1".into());
        }
        if self.sample_rate < 1000 {
            return bad(format!("sample_rate {} too low", self.sample_rate));
        }
        if !(0.0..=1.0).contains(&self.abnormal_fraction) {
            return bad(format!(
                "abnormal_fraction {} outside [0, 1]",
                self.abnormal_fraction
            ));
        }
        if !(self.taper_fraction > 0.0 && self.taper_fraction <= 1.0) {
            return bad(format!(
                "taper_fraction {} outside (0, 1]",
                self.taper_fraction
            ));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return bad(format!("q {} must be positive", self.q));
        }
        for (name, r) in [
            ("lead_silence_s", self.lead_silence_s),
            ("gap_s", self.gap_s),
            ("trail_silence_s", self.trail_silence_s),
        ] {
            if !r.is_valid() || r.lo < 0.0 {
                return bad(format!("{name} must be a non-negative range"));
            }
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for (name, p) in [("normal", &self.normal), ("abnormal", &self.abnormal)] {
            let ranges = [p.amplitude, p.frequency_hz, p.duration_s];
            if ranges.iter().any(|r| !r.is_valid() || r.lo <= 0.0) {
                return bad(format!(
                    "{name} profile ranges must be positive with lo <= hi"
                ));
            }
            if p.amplitude.hi > 1.0 {
                return bad(format!("{name} amplitude exceeds full scale"));
            }
            if p.frequency_hz.hi >= nyquist {
                return bad(format!("{name} frequency reaches Nyquist ({nyquist} Hz)"));
            }
            if !(p.noise_floor >= 0.0 && p.noise_floor < 1.0) {
                return bad(format!("{name} noise_floor must be in [0, 1)"));
            }
        }
        if self.separability == Separability::Strict
            && self.normal.amplitude.overlaps(&self.abnormal.amplitude)
        {
            return bad("strict separability needs disjoint amplitude ranges".into());
        }
        Ok(())
    }

    pub fn profile(&self, abnormal: bool) -> &ClassProfile {
        if abnormal {
            &self.abnormal
        } else {
            &self.normal
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecording {
    /// File stem, e.g. `P003_r2`.
    pub name: String,
    pub clip: AudioClip,
    pub annotation: Annotation,
}

#[derive(Debug, Clone)]
pub struct SynthPatient {
    pub patient_id: String,
    pub age: f64,
    pub gender: Gender,
    pub pas: u8,
    pub abnormal: bool,
    pub recordings: Vec<SynthRecording>,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub config: SynthConfig,
    pub patients: Vec<SynthPatient>,
}

/// Second-order band-pass (constant 0 dB peak gain) centred at `f0`.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(f0: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * f0 / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Tapered-cosine window: cosine ramps over `taper / 2` of the length at each
/// end, flat in between.
fn tukey(n: usize, taper: f64) -> Vec<f64> {
    let ramp = ((taper * n as f64) / 2.0).max(1.0);
    (0..n)
        .map(|i| {
            let t = i as f64 + 0.5;
            let edge = t.min(n as f64 - t);
            if edge >= ramp {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge / ramp).cos()
            }
        })
        .collect()
}

const FILTER_WARMUP: usize = 1024;

fn burst(rng: &mut SplitMix64, n: usize, amplitude: f64, f0: f64, cfg: &SynthConfig) -> Vec<f64> {
    let mut filter = BandPass::new(f0, cfg.q, cfg.sample_rate as f64);
    for _ in 0..FILTER_WARMUP {
        filter.step(rng.gaussian());
    }
    let env = tukey(n, cfg.taper_fraction);
    let mut out: Vec<f64> = env
        .iter()
        .map(|w| w * filter.step(rng.gaussian()))
        .collect();
    let mean_abs = out.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    if mean_abs > 0.0 {
        let k = amplitude / mean_abs;
        out.iter_mut().for_each(|v| *v *= k);
    }
    out
}

fn recording(
    rng: &mut SplitMix64,
    name: String,
    n_swallows: usize,
    profile: &ClassProfile,
    cfg: &SynthConfig,
) -> Result<SynthRecording, SynthError> {
    let sr = cfg.sample_rate as f64;
    let to_samples = |s: f64| (s * sr).round() as usize;

    // layout first so every draw happens in a fixed order
    let lead = to_samples(cfg.lead_silence_s.sample(rng));
    let mut bursts = Vec::with_capacity(n_swallows);
    for i in 0..n_swallows {
        let gap = if i == 0 {
            0
        } else {
            to_samples(cfg.gap_s.sample(rng))
        };
        let len = to_samples(profile.duration_s.sample(rng)).max(2);
        let amp = profile.amplitude.sample(rng);
        let f0 = profile.frequency_hz.sample(rng);
        bursts.push((gap, len, amp, f0));
    }
    let trail = to_samples(cfg.trail_silence_s.sample(rng));
    let total = lead + bursts.iter().map(|b| b.0 + b.1).sum::<usize>() + trail;

    let mut samples: Vec<f64> = (0..total)
        .map(|_| profile.noise_floor * rng.gaussian())
        .collect();
    let mut segments = Vec::with_capacity(n_swallows);
    let mut pos = lead;
    for &(gap, len, amp, f0) in &bursts {
        pos += gap;
        for (s, b) in samples[pos..pos + len]
            .iter_mut()
            .zip(burst(rng, len, amp, f0, cfg))
        {
            *s += b;
        }
        segments.push(
            Segment::new(pos as f64 / sr, (pos + len) as f64 / sr)
                .expect("burst extent is ordered"),
        );
        pos += len;
    }
    let clip = AudioClip::from_unclamped(samples, cfg.sample_rate, name.clone())?;
    Ok(SynthRecording {
        annotation: Annotation {
            source_id: name.clone(),
            segments,
        },
        name,
        clip,
    })
}

/// Sizes of `ceil(n / max)` recordings, as even as possible, larger first.
fn recording_sizes(n: usize, max: usize) -> Vec<usize> {
    let k = n.div_ceil(max);
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Builds the cohort in memory. Patient `i` draws from its own PRNG stream,
/// so changing `n_patients` leaves earlier patients' audio untouched.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort, SynthError> {
    cfg.validate()?;
    let n = cfg.n_patients;
    let mut rng = SplitMix64::derive(cfg.seed, u64::MAX);

    let n_abnormal = (cfg.abnormal_fraction * n as f64).round() as usize;
    let mut abnormal: Vec<bool> = (0..n).map(|i| i < n_abnormal).collect();
    rng.shuffle(&mut abnormal);
    let mut genders: Vec<Gender> = (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Gender::Female
            } else {
                Gender::Male
            }
        })
        .collect();
    rng.shuffle(&mut genders);

    let width = n.to_string().len().max(3);
    let mut patients = Vec::with_capacity(n);
    for i in 0..n {
        let mut prng = SplitMix64::derive(cfg.seed, i as u64);
        let patient_id = format!("P{:0width$}", i + 1);
        let age = prng.int_inclusive(30, 96) as f64;
        let pas = if abnormal[i] {
            prng.int_inclusive(3, 8)
        } else {
            prng.int_inclusive(1, 2)
        } as u8;
        let (lo, hi) = cfg.swallows_per_patient;
        let k = prng.int_inclusive(lo as i64, hi as i64) as usize;
        let profile = cfg.profile(abnormal[i]);
        let recordings = recording_sizes(k, cfg.max_swallows_per_recording)
            .into_iter()
            .enumerate()
            .map(|(r, size)| {
                recording(
                    &mut prng,
                    format!("{patient_id}_r{}", r + 1),
                    size,
                    profile,
                    cfg,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        patients.push(SynthPatient {
            patient_id,
            age,
            gender: genders[i],
            pas,
            abnormal: abnormal[i],
            recordings,
        });
    }
    Ok(SynthCohort {
        config: cfg.clone(),
        patients,
    })
}

/// Writes `manifest.csv`, `wav/<name>.wav` and `annotations/<name>.json`
/// under `dir`, returning the manifest path.
pub fn write_cohort(cohort: &SynthCohort, dir: &Path) -> Result<PathBuf, SynthError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    let wav_dir = dir.join("wav");
    let ann_dir = dir.join("annotations");
    for d in [&wav_dir, &ann_dir] {
        std::fs::create_dir_all(d).map_err(io(d))?;
    }

    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record([
        "patient_id",
        "age",
        "gender",
        "pas",
        "wav_path",
        "annotation_path",
    ])?;
    for p in &cohort.patients {
        for r in &p.recordings {
            let wav_rel = format!("wav/{}.wav", r.name);
            let ann_rel = format!("annotations/{}.json", r.name);
            audio_io::write_wav_file(&r.clip, &dir.join(&wav_rel))?;
            let ann_path = dir.join(&ann_rel);
            std::fs::write(&ann_path, r.annotation.to_json()).map_err(io(&ann_path))?;
            w.write_record([
                p.patient_id.as_str(),
                &p.age.to_string(),
                &p.gender.to_string(),
                &p.pas.to_string(),
                &wav_rel,
                &ann_rel,
            ])?;
        }
    }
    w.flush().map_err(io(&manifest))?;
    Ok(manifest)
}
