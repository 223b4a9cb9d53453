//! Synthetic tone corpus. Class `c` is a tone at `f_c` plus its octave
//! `2 f_c` (random phases), with white Gaussian noise at the given SNR.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AudioClip, Dataset};
use crate::error::{Error, Result};
use crate::frontend::Waveform;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// Signal-to-noise ratio in dB; `None` means no noise.
    pub snr_db: Option<f64>,
    pub base_hz: f64,
    pub step_hz: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            clip_seconds: 1.0,
            sample_rate: 16_000,
            snr_db: Some(20.0),
            base_hz: 200.0,
            step_hz: 150.0,
        }
    }
}

const AMPS: [f64; 2] = [0.5, 0.25];

impl SyntheticSpec {
    pub fn class_hz(&self, c: usize) -> f64 {
        self.base_hz + self.step_hz * c as f64
    }

    pub fn samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples() == 0 || self.base_hz <= 0.0 || self.step_hz <= 0.0
        {
            return Err(Error::Config(format!("invalid synthetic spec {self:?}")));
        }
        let top = 2.0 * self.class_hz(self.n_classes - 1);
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "highest partial {top} Hz is above Nyquist for {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    fn signal_power(&self) -> f64 {
        AMPS.iter().map(|a| a * a / 2.0).sum()
    }
}

/// `n` clips with labels balanced to within one, in shuffled order.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    spec.validate()?;
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    labels.shuffle(rng);
    let sigma = spec
        .snr_db
        .map(|snr| (spec.signal_power() / 10f64.powf(snr / 10.0)).sqrt());
    let noise = Normal::new(0.0, sigma.unwrap_or(0.0)).expect("finite sigma");
    let sr = spec.sample_rate as f64;
    let t = spec.samples();
    let clips = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let f = spec.class_hz(label);
            let phases: [f64; 2] = [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ];
            let samples = (0..t)
                .map(|j| {
                    let time = j as f64 / sr;
                    let tone: f64 = (0..2)
                        .map(|h| {
                            AMPS[h]
                                * (std::f64::consts::TAU * f * (h + 1) as f64 * time + phases[h])
                                    .sin()
                        })
                        .sum();
                    let eps = if sigma.is_some() {
                        noise.sample(rng)
                    } else {
                        0.0
                    };
                    (tone + eps) as f32
                })
                .collect();
            Ok(AudioClip {
                waveform: Waveform::new(samples, spec.sample_rate)?,
                label,
                source_id: format!("synth-{i:05}"),
                speaker_id: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(clips, spec.n_classes)
}

/// Goertzel power of `samples` at `hz`.
fn tone_power(samples: &[f32], hz: f64, sr: f64) -> f64 {
    let w = std::f64::consts::TAU * hz / sr;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0, 0.0);
    for &x in samples {
        let s0 = x as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}

/// Reference classifier: picks the class whose two partials carry the most
/// energy. Phase-invariant, so it is exact on noiseless clips.
pub fn template_classify(spec: &SyntheticSpec, w: &Waveform) -> usize {
    let sr = w.sample_rate as f64;
    (0..spec.n_classes)
        .map(|c| {
            let f = spec.class_hz(c);
            tone_power(&w.samples, f, sr) + tone_power(&w.samples, 2.0 * f, sr)
        })
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (c, e)| {
            if e > best.1 {
                (c, e)
            } else {
                best
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn accuracy(spec: &SyntheticSpec, ds: &Dataset) -> f64 {
        let hits = ds
            .clips
            .iter()
            .filter(|c| template_classify(spec, &c.waveform) == c.label)
            .count();
        hits as f64 / ds.len() as f64
    }

    #[test]
    fn noiseless_templates_are_exact() {
        let spec = SyntheticSpec {
            n_classes: 10,
            snr_db: None,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec, 100, &mut substream(1, "data")).unwrap();
        assert_eq!(accuracy(&spec, &ds), 1.0);
    }

    #[test]
    fn noisy_corpus_stays_separable() {
        let spec = SyntheticSpec::default();
        let ds = generate_synthetic(&spec, 200, &mut substream(2, "data")).unwrap();
        assert_eq!(accuracy(&spec, &ds), 1.0);
        let power: f64 = ds.clips[0]
            .waveform
            .samples
            .iter()
            .map(|&s| (s as f64).powi(2))
            .sum::<f64>()
            / spec.samples() as f64;
        // Signal 0.156 plus 1% noise.
        assert!((power - 0.156 * 1.01).abs() < 0.01, "{power}");
    }

    #[test]
    fn balanced_and_reproducible() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec, 203, &mut substream(3, "data")).unwrap();
        let b = generate_synthetic(&spec, 203, &mut substream(3, "data")).unwrap();
        assert_eq!(a.clips, b.clips);
        let counts = a.class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn aliasing_rejected() {
        let spec = SyntheticSpec {
            n_classes: 40,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec, 4, &mut substream(4, "data")).is_err());
    }
}
