//! Short-time Fourier transform and log-mel features.
//!
//! Conventions: periodic Hann window, reflect padding of `n_fft / 2` on both
//! ends (so `F = floor(T / hop) + 1`), power spectrum, HTK mel scale with
//! peak-normalized triangles, natural log after flooring at `1e-10`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_MELS: usize = 128;
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames produced by [`stft`] for `t` samples.
pub fn frame_count(t: usize, hop: usize) -> usize {
    t / hop + 1
}

fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// One-sided spectra, `F x (n_fft / 2 + 1)`.
pub fn stft(samples: &[f32], n_fft: usize, hop: usize) -> Result<Vec<Vec<Complex64>>> {
    if samples.is_empty() {
        return Err(Error::InputTooShort {
            op: "stft",
            needed: 1,
            got: 0,
        });
    }
    if n_fft == 0 || hop == 0 {
        return Err(Error::Config("stft needs positive n_fft and hop".into()));
    }
    let window = hann_window(n_fft);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let pad = (n_fft / 2) as isize;
    let frames = frame_count(samples.len(), hop);
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for f in 0..frames {
        let start = (f * hop) as isize - pad;
        for (j, slot) in buf.iter_mut().enumerate() {
            let s = samples[reflect(start + j as isize, samples.len())] as f64;
            *slot = Complex64::new(s * window[j], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..n_fft / 2 + 1].to_vec());
    }
    Ok(out)
}

/// Triangular HTK-mel filters, `n_mels x (n_fft / 2 + 1)`, row-major.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
) -> Result<Vec<Vec<f64>>> {
    if f_max > sample_rate / 2.0 || f_min < 0.0 || f_min >= f_max {
        return Err(Error::Config(format!(
            "mel range [{f_min}, {f_max}] Hz invalid for sample rate {sample_rate}"
        )));
    }
    let n_freqs = n_fft / 2 + 1;
    let bin_hz: Vec<f64> = (0..n_freqs)
        .map(|i| i as f64 * sample_rate / 2.0 / (n_freqs - 1) as f64)
        .collect();
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bank = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row: Vec<f64> = bin_hz
            .iter()
            .map(|&f| {
                let rising = (f - lo) / (center - lo);
                let falling = (hi - f) / (hi - center);
                rising.min(falling).max(0.0)
            })
            .collect();
        if row.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer mels or a larger FFT"
            )));
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Log-mel image `M in R^{1 x n_mels x F}` stored as `n_mels x F` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.data[mel * self.frames + frame]
    }

    /// Right-pads the time axis with the log floor up to a multiple of `m`.
    pub fn pad_frames_to_multiple(&self, m: usize) -> MelSpectrogram {
        let frames = self.frames.div_ceil(m) * m;
        let fill = LOG_FLOOR.ln();
        let mut data = Vec::with_capacity(self.n_mels * frames);
        for row in self.data.chunks(self.frames) {
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(fill, frames - self.frames));
        }
        MelSpectrogram {
            n_mels: self.n_mels,
            frames,
            data,
        }
    }

    /// Elementwise convex combination, used by mixup on the spectrogram path.
    /// Both images must have the same shape.
    pub fn mix(&self, other: &MelSpectrogram, lambda: f64) -> Result<MelSpectrogram> {
        if self.n_mels != other.n_mels || self.frames != other.frames {
            return Err(Error::shape(
                "mel_mix",
                format!(
                    "{}x{} vs {}x{}",
                    self.n_mels, self.frames, other.n_mels, other.frames
                ),
            ));
        }
        Ok(MelSpectrogram {
            n_mels: self.n_mels,
            frames: self.frames,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        })
    }
}

/// Computes the 128-bin log-mel spectrogram of a 16 kHz signal.
#[derive(Clone, Debug)]
pub struct MelExtractor {
    n_fft: usize,
    hop: usize,
    bank: Vec<Vec<f64>>,
}

impl MelExtractor {
    pub fn new(sample_rate: u32) -> Result<Self> {
        let sr = sample_rate as f64;
        Ok(Self {
            n_fft: N_FFT,
            hop: HOP,
            bank: mel_filterbank(N_MELS, N_FFT, sr, 0.0, sr / 2.0)?,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.bank.len()
    }

    pub fn compute(&self, samples: &[f32]) -> Result<MelSpectrogram> {
        let spectra = stft(samples, self.n_fft, self.hop)?;
        let frames = spectra.len();
        let n_mels = self.bank.len();
        let mut data = vec![0.0; n_mels * frames];
        for (f, spec) in spectra.iter().enumerate() {
            let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
            for (m, filt) in self.bank.iter().enumerate() {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                data[m * frames + f] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(MelSpectrogram {
            n_mels,
            frames,
            data,
        })
    }
}
