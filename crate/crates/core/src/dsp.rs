//! Numerical kernels: discrete Fourier transform, STFT and amplitude envelopes.

use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::audio_io::AudioClip;

/// Default STFT window length (samples).
pub const DEFAULT_N_FFT: usize = 2048;
/// Default STFT hop (samples).
pub const DEFAULT_HOP: usize = 512;
/// Floor applied before taking logarithms of magnitudes.
pub const DB_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DspError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("invalid window: n_fft={n_fft}, hop={hop}")]
    InvalidWindow { n_fft: usize, hop: usize },
    #[error("reference must be positive, got {0}")]
    NonPositiveReference(f64),
}

/// Discrete Fourier transform `X[k] = sum_n x[n] exp(-j 2 pi k n / N)`.
///
/// Power-of-two lengths use an iterative radix-2 FFT; any other length is
/// evaluated directly in O(N^2).
pub fn dft(signal: &[f64]) -> Result<Vec<Complex64>, DspError> {
    if signal.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    if signal.len().is_power_of_two() {
        let twiddles = Twiddles::new(signal.len());
        fft_in_place(&mut buf, &twiddles);
        Ok(buf)
    } else {
        Ok(dft_direct(&buf))
    }
}

fn dft_direct(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| {
                    // reduce k*i mod n first so the angle stays small and exact
                    let angle = -TAU * ((k * i) % n) as f64 / n as f64;
                    v * Complex64::new(angle.cos(), angle.sin())
                })
                .sum()
        })
        .collect()
}

/// Precomputed `exp(-j 2 pi k / N)` for `k < N/2`, each evaluated directly
/// rather than by recurrence.
struct Twiddles {
    n: usize,
    table: Vec<Complex64>,
}

impl Twiddles {
    fn new(n: usize) -> Self {
        let table = (0..n / 2)
            .map(|k| {
                let angle = -TAU * k as f64 / n as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        Self { n, table }
    }
}

fn fft_in_place(buf: &mut [Complex64], tw: &Twiddles) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two() && n == tw.n);
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = tw.table[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Index into `x` for a virtual position outside its bounds, mirroring about
/// the end samples without repeating them (numpy `reflect` mode).
fn reflect_index(pos: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = pos.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Magnitude spectrogram, stored bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Vec<f64>,
    bin_freqs: Vec<f64>,
    frame_times: Vec<f64>,
    n_fft: usize,
    hop: usize,
}

impl Spectrogram {
    /// Builds a spectrogram from per-frame magnitude columns.
    ///
    /// Every column must have `n_fft / 2 + 1` non-negative entries.
    pub fn from_frames(
        frames: &[Vec<f64>],
        sample_rate: u32,
        n_fft: usize,
        hop: usize,
    ) -> Result<Self, DspError> {
        if n_fft < 2 || hop == 0 {
            return Err(DspError::InvalidWindow { n_fft, hop });
        }
        let n_bins = n_fft / 2 + 1;
        if frames.is_empty() {
            return Err(DspError::EmptySignal);
        }
        if frames
            .iter()
            .any(|f| f.len() != n_bins || f.iter().any(|m| !(*m >= 0.0)))
        {
            return Err(DspError::InvalidWindow { n_fft, hop });
        }
        let n_frames = frames.len();
        let mut magnitudes = vec![0.0; n_bins * n_frames];
        for (t, col) in frames.iter().enumerate() {
            for (k, &m) in col.iter().enumerate() {
                magnitudes[k * n_frames + t] = m;
            }
        }
        let sr = sample_rate as f64;
        Ok(Self {
            magnitudes,
            bin_freqs: (0..n_bins).map(|k| k as f64 * sr / n_fft as f64).collect(),
            frame_times: (0..n_frames).map(|t| (t * hop) as f64 / sr).collect(),
            n_fft,
            hop,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.bin_freqs.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bin_freqs(&self) -> &[f64] {
        &self.bin_freqs
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn magnitude(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.n_frames() + frame]
    }

    /// Magnitudes of one frequency bin across all frames.
    pub fn bin_row(&self, bin: usize) -> &[f64] {
        let n = self.n_frames();
        &self.magnitudes[bin * n..(bin + 1) * n]
    }

    /// Magnitudes of one frame across all bins.
    pub fn frame_column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| self.magnitude(k, frame))
            .collect()
    }
}

/// Short-time Fourier transform magnitudes of a clip.
///
/// Frames are centered: the signal is reflection-padded by `n_fft / 2` on both
/// sides, frame `t` starts at padded index `t * hop`, and there are
/// `1 + len / hop` frames. Each frame is multiplied by a periodic Hann window.
pub fn stft(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<Spectrogram, DspError> {
    stft_samples(clip.samples(), clip.sample_rate(), n_fft, hop)
}

pub fn stft_samples(
    samples: &[f64],
    sample_rate: u32,
    n_fft: usize,
    hop: usize,
) -> Result<Spectrogram, DspError> {
    if n_fft < 2 || hop == 0 || hop > n_fft {
        return Err(DspError::InvalidWindow { n_fft, hop });
    }
    if samples.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let len = samples.len();
    let pad = (n_fft / 2) as isize;
    let n_frames = 1 + len / hop;
    let n_bins = n_fft / 2 + 1;
    let window = hann_window(n_fft);
    let twiddles = n_fft.is_power_of_two().then(|| Twiddles::new(n_fft));

    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = (t * hop) as isize - pad;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = samples[reflect_index(start + i as isize, len)];
            *slot = Complex64::new(x * window[i], 0.0);
        }
        let spectrum = match &twiddles {
            Some(tw) => {
                fft_in_place(&mut buf, tw);
                buf[..n_bins].to_vec()
            }
            None => dft_direct(&buf)[..n_bins].to_vec(),
        };
        frames.push(spectrum.iter().map(|c| c.norm()).collect::<Vec<_>>());
    }
    Spectrogram::from_frames(&frames, sample_rate, n_fft, hop)
}

/// `20 * log10(max(m, 1e-10) / reference)` for each magnitude.
pub fn amplitude_to_db(magnitudes: &[f64], reference: f64) -> Result<Vec<f64>, DspError> {
    if !(reference > 0.0) {
        return Err(DspError::NonPositiveReference(reference));
    }
    Ok(magnitudes
        .iter()
        .map(|&m| 20.0 * (m.max(DB_FLOOR) / reference).log10())
        .collect())
}

/// Root mean square of a slice; zero for an empty slice.
pub fn rms(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt()
}

/// One point of an RMS envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsFrame {
    /// Frame center in seconds.
    pub time_s: f64,
    pub rms: f64,
}

/// Centered RMS envelope with the same framing as [`stft`].
pub fn frame_rms(
    clip: &AudioClip,
    frame_len: usize,
    hop: usize,
) -> Result<Vec<RmsFrame>, DspError> {
    if frame_len == 0 || hop == 0 {
        return Err(DspError::InvalidWindow {
            n_fft: frame_len,
            hop,
        });
    }
    let x = clip.samples();
    let len = x.len();
    let sr = clip.sample_rate() as f64;
    let pad = (frame_len / 2) as isize;
    let n_frames = 1 + len / hop;

    // squared signal with reflection padding, then a running sum per frame
    let padded_len = (n_frames - 1) * hop + frame_len;
    let mut prefix = Vec::with_capacity(padded_len + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0;
    for i in 0..padded_len {
        let v = x[reflect_index(i as isize - pad, len)];
        acc += v * v;
        prefix.push(acc);
    }
    Ok((0..n_frames)
        .map(|t| {
            let a = t * hop;
            let energy = (prefix[a + frame_len] - prefix[a]).max(0.0);
            RmsFrame {
                time_s: (t * hop) as f64 / sr,
                rms: (energy / frame_len as f64).sqrt(),
            }
        })
        .collect())
}
