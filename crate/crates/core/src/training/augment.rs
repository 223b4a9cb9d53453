//! Waveform augmentation and mixup.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{Error, Result};
use crate::frontend::FrontendInput;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Largest circular shift, in seconds, either direction.
    pub shift_s: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            shift_s: 0.5,
            gain_min: 0.8,
            gain_max: 1.2,
            noise_std: 0.005,
        }
    }
}

/// Circular shift, then random gain, then additive Gaussian noise.
pub fn augment(
    samples: &[f32],
    sample_rate: u32,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Vec<f32> {
    let t = samples.len();
    if t == 0 {
        return Vec::new();
    }
    let max = (cfg.shift_s * sample_rate as f64).round() as i64;
    let shift = rng.random_range(-max..=max).rem_euclid(t as i64) as usize;
    let mut out = shift_circular(samples, shift);
    let gain = if cfg.gain_max > cfg.gain_min {
        rng.random_range(cfg.gain_min..=cfg.gain_max)
    } else {
        cfg.gain_min
    };
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite noise std");
    for s in &mut out {
        let eps = if cfg.noise_std > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        };
        *s = (gain * *s as f64 + eps) as f32;
    }
    out
}

/// `out[i] = x[(i - shift) mod T]`.
pub fn shift_circular(x: &[f32], shift: usize) -> Vec<f32> {
    let t = x.len();
    (0..t).map(|i| x[(i + t - shift % t) % t]).collect()
}

/// Where mixup interpolates: the frontend input (waveform for the raw path,
/// log-mel image for the spectrogram path) or always the waveform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MixupDomain {
    #[default]
    Input,
    Waveform,
}

impl std::fmt::Display for MixupDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MixupDomain::Input => "input",
            MixupDomain::Waveform => "waveform",
        })
    }
}

impl std::str::FromStr for MixupDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(MixupDomain::Input),
            "waveform" => Ok(MixupDomain::Waveform),
            _ => Err(Error::Config(format!(
                "unknown mixup domain `{s}` (input, waveform)"
            ))),
        }
    }
}

/// One mixing coefficient drawn from `Beta(alpha, alpha)`.
pub fn mixup_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let beta =
        Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// Partner index for each batch position.
pub fn mixup_pairing(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

pub fn mix_waveforms(a: &[f32], b: &[f32], lambda: f64) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "mixup",
            format!("waveforms of {} and {} samples", a.len(), b.len()),
        ));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (lambda * x as f64 + (1.0 - lambda) * y as f64) as f32)
        .collect())
}

pub fn mix_inputs(a: &FrontendInput, b: &FrontendInput, lambda: f64) -> Result<FrontendInput> {
    match (a, b) {
        (FrontendInput::Raw(x), FrontendInput::Raw(y)) => {
            Ok(FrontendInput::Raw(mix_waveforms(x, y, lambda)?))
        }
        (FrontendInput::Mel(x), FrontendInput::Mel(y)) => Ok(FrontendInput::Mel(x.mix(y, lambda)?)),
        _ => Err(Error::shape(
            "mixup",
            "cannot mix raw and spectrogram inputs",
        )),
    }
}

pub fn mix_targets(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

pub fn one_hot(label: usize, n_classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_classes];
    t[label] = 1.0;
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    #[test]
    fn identity_config_is_identity() {
        let cfg = AugmentConfig {
            shift_s: 0.0,
            gain_min: 1.0,
            gain_max: 1.0,
            noise_std: 0.0,
        };
        let x: Vec<f32> = (0..100).map(|i| i as f32 * 0.01).collect();
        assert_eq!(augment(&x, 16_000, &cfg, &mut substream(1, "augment")), x);
    }

    #[test]
    fn shift_only_is_a_rotation() {
        let cfg = AugmentConfig {
            shift_s: 0.01,
            gain_min: 1.0,
            gain_max: 1.0,
            noise_std: 0.0,
        };
        let x: Vec<f32> = (0..1000).map(|i| i as f32).collect();
        let y = augment(&x, 16_000, &cfg, &mut substream(2, "augment"));
        let k = (0..1000)
            .find(|&k| shift_circular(&x, k) == y)
            .expect("a rotation");
        assert!(k <= 160 || k >= 1000 - 160);
        assert_eq!(shift_circular(&[1.0, 2.0, 3.0], 1), [3.0, 1.0, 2.0]);
    }

    #[test]
    fn gain_stays_in_range() {
        let cfg = AugmentConfig {
            shift_s: 0.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let mut rng = substream(3, "augment");
        for _ in 0..200 {
            let y = augment(&[1.0], 16_000, &cfg, &mut rng);
            assert!((0.8..=1.2).contains(&(y[0] as f64)), "{}", y[0]);
        }
    }

    #[test]
    fn noise_has_the_configured_scale() {
        let cfg = AugmentConfig {
            shift_s: 0.0,
            gain_min: 1.0,
            gain_max: 1.0,
            noise_std: 0.005,
        };
        let y = augment(
            &vec![0.0; 50_000],
            16_000,
            &cfg,
            &mut substream(4, "augment"),
        );
        let sd = (y.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!((sd - 0.005).abs() < 2e-4, "{sd}");
    }

    #[test]
    fn mixing_inputs_checks_kinds() {
        let a = FrontendInput::Raw(vec![1.0, 0.0]);
        let b = FrontendInput::Raw(vec![0.0, 1.0]);
        match mix_inputs(&a, &b, 0.25).unwrap() {
            FrontendInput::Raw(v) => assert_eq!(v, [0.25, 0.75]),
            _ => unreachable!(),
        }
        assert!(mix_inputs(&a, &FrontendInput::Raw(vec![0.0]), 0.5).is_err());
        assert!(mixup_lambda(0.0, &mut substream(0, "mixup")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn mixed_targets_are_distributions(seed in any::<u64>(), alpha in 0.05f64..5.0, n in 2usize..12) {
            let mut rng = substream(seed, "mixup");
            let lambda = mixup_lambda(alpha, &mut rng).unwrap();
            prop_assert!((0.0..=1.0).contains(&lambda));
            let perm = mixup_pairing(n, &mut rng);
            for (i, &pi) in perm.iter().enumerate() {
                let t = mix_targets(&one_hot(i % 3, 3), &one_hot(pi % 3, 3), lambda);
                prop_assert!(t.iter().all(|&p| p >= 0.0));
                prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }
}
