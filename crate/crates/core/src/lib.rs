//! Swallow-sound analysis: WAV ingestion, spectral features, swallow
//! segmentation, random-forest risk classification and patient-level
//! aggregation, plus a synthetic cohort generator for end-to-end checks.

pub mod audio_io;
pub mod dataset;
pub mod dsp;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod segmentation;
pub mod synth;

pub use audio_io::{load_wav, write_wav, AudioClip, AudioError};
pub use pipeline::PipelineError as Error;
