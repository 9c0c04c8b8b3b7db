//! RIFF/WAVE parsing and writing.
//!
//! Decodes PCM (format code 1) and IEEE float (format code 3) files into a
//! normalized mono [`AudioClip`]. Integer samples are divided by the
//! magnitude of the type's most negative value, so 16-bit `-32768` maps to
//! exactly `-1.0` and `32767` to just under `+1.0`. Multi-channel frames are
//! downmixed with an unweighted mean.
//!
//! The parser never panics on malformed input: every structural problem is
//! reported as an [`AudioError`].

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no sample frames")]
    EmptyAudio,
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

/// A normalized mono waveform.
///
/// Samples lie in `[-1, 1]`, the clip is never empty, and the sample rate is
/// positive. Fields are private so those invariants hold for every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        source_id: impl Into<String>,
    ) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip(
                "sample rate must be positive".into(),
            ));
        }
        if samples.is_empty() {
            return Err(AudioError::EmptyAudio);
        }
        if let Some(i) = samples.iter().position(|s| !(-1.0..=1.0).contains(s)) {
            return Err(AudioError::InvalidClip(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    /// Builds a clip after clamping every sample into `[-1, 1]`.
    /// Non-finite samples are still rejected.
    pub fn from_unclamped(
        samples: Vec<f64>,
        sample_rate: u32,
        source_id: impl Into<String>,
    ) -> Result<Self, AudioError> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip("non-finite sample".into()));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Self::new(samples, sample_rate, source_id)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// A new clip with every sample multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, AudioError> {
        Self::new(
            self.samples.iter().map(|s| s * factor).collect(),
            self.sample_rate,
            self.source_id.clone(),
        )
    }
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits_per_sample: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn malformed(msg: impl Into<String>) -> AudioError {
    AudioError::MalformedContainer(msg.into())
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(malformed(format!(
            "fmt chunk too short ({} bytes)",
            body.len()
        )));
    }
    let fmt = FmtChunk {
        format: u16_at(body, 0),
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        block_align: u16_at(body, 12),
        bits_per_sample: u16_at(body, 14),
    };
    match fmt.format {
        FORMAT_PCM => {
            if !matches!(fmt.bits_per_sample, 8 | 16 | 24 | 32) {
                return Err(AudioError::UnsupportedEncoding(format!(
                    "{}-bit PCM",
                    fmt.bits_per_sample
                )));
            }
        }
        FORMAT_IEEE_FLOAT => {
            if !matches!(fmt.bits_per_sample, 32 | 64) {
                return Err(AudioError::UnsupportedEncoding(format!(
                    "{}-bit float",
                    fmt.bits_per_sample
                )));
            }
        }
        other => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format code {other:#06x}"
            )))
        }
    }
    if fmt.channels == 0 {
        return Err(malformed("zero channels"));
    }
    if fmt.sample_rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    let expected_align = fmt.channels as usize * (fmt.bits_per_sample as usize / 8);
    if fmt.block_align as usize != expected_align {
        return Err(malformed(format!(
            "block align {} does not match {} channels of {} bits",
            fmt.block_align, fmt.channels, fmt.bits_per_sample
        )));
    }
    Ok(fmt)
}

fn decode_sample(fmt: &FmtChunk, b: &[u8]) -> f64 {
    match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 8) => (b[0] as f64 - 128.0) / 128.0,
        (FORMAT_PCM, 16) => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
        (FORMAT_PCM, 24) => {
            // sign-extend through the top byte of an i32
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f64 / 8_388_608.0
        }
        (FORMAT_PCM, 32) => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0,
        (FORMAT_IEEE_FLOAT, 32) => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        (FORMAT_IEEE_FLOAT, 64) => {
            f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]])
        }
        _ => unreachable!("format validated in parse_fmt"),
    }
}

/// Parses a RIFF/WAVE byte stream into a mono clip.
///
/// Chunks other than `fmt ` and `data` (LIST, cue, ...) are skipped. Every
/// chunk must fit inside the RIFF payload, so a truncated file is an error.
pub fn load_wav(bytes: &[u8], source_id: &str) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }
    let riff_size = u32_at(bytes, 4) as usize;
    let riff_end = riff_size
        .checked_add(8)
        .filter(|&end| end <= bytes.len() && riff_size >= 4)
        .ok_or_else(|| {
            malformed(format!(
                "RIFF size {riff_size} exceeds {} available bytes",
                bytes.len() - 8
            ))
        })?;

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos < riff_end {
        if riff_end - pos < 8 {
            return Err(malformed(format!("truncated chunk header at byte {pos}")));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= riff_end)
            .ok_or_else(|| malformed(format!("chunk at byte {pos} overruns the file")))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if fmt.is_some() {
                    return Err(malformed("duplicate fmt chunk"));
                }
                fmt = Some(parse_fmt(body)?);
            }
            b"data" => {
                if data.is_some() {
                    return Err(malformed("duplicate data chunk"));
                }
                data = Some(body);
            }
            _ => {}
        }
        // chunks are word aligned; the pad byte may be absent on the last one
        pos = (body_end + (size & 1)).min(riff_end);
    }

    let fmt = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    let block = fmt.block_align as usize;
    if data.len() % block != 0 {
        return Err(malformed(format!(
            "data length {} is not a multiple of block align {block}",
            data.len()
        )));
    }
    let n_frames = data.len() / block;
    if n_frames == 0 {
        return Err(AudioError::EmptyAudio);
    }

    let width = fmt.bits_per_sample as usize / 8;
    let channels = fmt.channels as usize;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(block) {
        let mut acc = 0.0;
        for ch in frame.chunks_exact(width) {
            let v = decode_sample(&fmt, ch);
            if !v.is_finite() {
                return Err(malformed("non-finite float sample"));
            }
            acc += v.clamp(-1.0, 1.0);
        }
        samples.push((acc / channels as f64).clamp(-1.0, 1.0));
    }
    AudioClip::new(samples, fmt.sample_rate, source_id)
}

/// Reads and parses a WAV file; the source id is the file stem.
pub fn read_wav_file(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_wav(&bytes, &id)
}

/// Encodes a clip as 16-bit PCM mono.
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav_file(clip: &AudioClip, path: &Path) -> Result<(), AudioError> {
    std::fs::write(path, write_wav(clip)).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled PCM file, independent of `write_wav`.
    fn pcm16(channels: u16, rate: u32, frames: &[i16]) -> Vec<u8> {
        let data: Vec<u8> = frames.iter().flat_map(|s| s.to_le_bytes()).collect();
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        b.extend_from_slice(&(2 * channels).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(&data);
        b
    }

    #[test]
    fn scales_16_bit_by_32768() {
        let clip = load_wav(&pcm16(1, 8000, &[0, 16384, -32768]), "x").unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate(), 8000);
    }

    #[test]
    fn stereo_downmix_is_the_mean() {
        let clip = load_wav(&pcm16(2, 8000, &[16384, -16384]), "x").unwrap();
        assert_eq!(clip.samples(), &[0.0]);
    }

    #[test]
    fn three_seconds_at_44k() {
        let frames = vec![0i16; 3 * 44100];
        let clip = load_wav(&pcm16(1, 44100, &frames), "x").unwrap();
        assert_eq!(clip.len(), 132_300);
        assert_eq!(clip.sample_rate(), 44100);
        assert!((clip.duration_s() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_clip_writes_zero_data() {
        let clip = AudioClip::new(vec![0.0; 4], 16000, "z").unwrap();
        let bytes = write_wav(&clip);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 8);
        assert!(bytes[44..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), 52);
    }

    #[test]
    fn byte_rate_is_rate_times_block_align() {
        let clip = AudioClip::new(vec![0.1; 10], 16000, "z").unwrap();
        let bytes = write_wav(&clip);
        assert_eq!(u32_at(&bytes, 28), 32000);
        assert_eq!(u16_at(&bytes, 32), 2);
    }

    #[test]
    fn skips_metadata_chunks() {
        let mut b = pcm16(1, 8000, &[100, 200]);
        // insert an odd-sized LIST chunk (with pad byte) before the data chunk
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), b"abc", &[0u8]].concat();
        b.splice(36..36, list.iter().copied());
        let riff = u32_at(&b, 4) + list.len() as u32;
        b[4..8].copy_from_slice(&riff.to_le_bytes());
        let clip = load_wav(&b, "x").unwrap();
        assert_eq!(clip.len(), 2);
    }

    #[test]
    fn decodes_other_widths() {
        // 8-bit unsigned, 24-bit and float, built by hand
        let mk = |format: u16, bits: u16, data: &[u8]| {
            let mut b = Vec::new();
            b.extend_from_slice(b"RIFF");
            b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
            b.extend_from_slice(b"WAVEfmt ");
            b.extend_from_slice(&16u32.to_le_bytes());
            b.extend_from_slice(&format.to_le_bytes());
            b.extend_from_slice(&1u16.to_le_bytes());
            b.extend_from_slice(&1000u32.to_le_bytes());
            b.extend_from_slice(&(1000 * bits as u32 / 8).to_le_bytes());
            b.extend_from_slice(&(bits / 8).to_le_bytes());
            b.extend_from_slice(&bits.to_le_bytes());
            b.extend_from_slice(b"data");
            b.extend_from_slice(&(data.len() as u32).to_le_bytes());
            b.extend_from_slice(data);
            b
        };
        let c8 = load_wav(&mk(1, 8, &[128, 192, 0]), "a").unwrap();
        assert_eq!(c8.samples(), &[0.0, 0.5, -1.0]);
        let c24 = load_wav(&mk(1, 24, &[0x00, 0x00, 0x40, 0x00, 0x00, 0x80]), "b").unwrap();
        assert_eq!(c24.samples(), &[0.5, -1.0]);
        let f: Vec<u8> = [0.25f32, -2.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let c32 = load_wav(&mk(3, 32, &f), "c").unwrap();
        assert_eq!(c32.samples(), &[0.25, -1.0]);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            load_wav(b"not a wav file at all", "x"),
            Err(AudioError::MalformedContainer(_))
        ));
        let empty = pcm16(1, 8000, &[]);
        assert!(matches!(load_wav(&empty, "x"), Err(AudioError::EmptyAudio)));
        let mut adpcm = pcm16(1, 8000, &[1, 2]);
        adpcm[20..22].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            load_wav(&adpcm, "x"),
            Err(AudioError::UnsupportedEncoding(_))
        ));
        let mut no_data = pcm16(1, 8000, &[1, 2]);
        no_data[36..40].copy_from_slice(b"junk");
        assert!(matches!(
            load_wav(&no_data, "x"),
            Err(AudioError::MalformedContainer(_))
        ));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = pcm16(2, 8000, &[1, -1, 300, -300, 32767, -32768]);
        for cut in 0..bytes.len() {
            assert!(load_wav(&bytes[..cut], "x").is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn clip_rejects_out_of_range() {
        assert!(AudioClip::new(vec![1.5], 8000, "x").is_err());
        assert!(AudioClip::new(vec![0.0], 0, "x").is_err());
        assert!(matches!(
            AudioClip::new(vec![], 8000, "x"),
            Err(AudioError::EmptyAudio)
        ));
        let c = AudioClip::from_unclamped(vec![1.5, -3.0], 8000, "x").unwrap();
        assert_eq!(c.samples(), &[1.0, -1.0]);
    }
}
