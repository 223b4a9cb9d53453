//! Waveform to token-sequence frontends.
//!
//! The raw path slices the signal into 10 ms frames with a strided 1-D
//! convolution (`k = stride = 160` at 16 kHz). The spectrogram path embeds
//! 16x16 patches of a 128-bin log-mel image with a strided 2-D convolution.
//! Both finish with a layer norm over the model width.

pub mod mel;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub use mel::{MelExtractor, MelSpectrogram};

pub const SAMPLE_RATE: u32 = 16_000;
pub const RAW_FRAME: usize = 160;
pub const PATCH: usize = 16;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrontendKind {
    Raw,
    Spectrogram,
}

impl FrontendKind {
    pub const ALL: [FrontendKind; 2] = [FrontendKind::Raw, FrontendKind::Spectrogram];

    /// Tokens produced for a clip of `samples` samples at 16 kHz.
    pub fn token_count(self, samples: usize) -> usize {
        match self {
            FrontendKind::Raw => samples / RAW_FRAME,
            FrontendKind::Spectrogram => {
                (mel::N_MELS / PATCH) * mel::frame_count(samples, mel::HOP).div_ceil(PATCH)
            }
        }
    }
}

impl fmt::Display for FrontendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrontendKind::Raw => "raw",
            FrontendKind::Spectrogram => "spectrogram",
        })
    }
}

impl FromStr for FrontendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FrontendKind::Raw),
            "spectrogram" | "spec" | "mel" => Ok(FrontendKind::Spectrogram),
            other => Err(Error::Config(format!(
                "unknown frontend '{other}' (expected raw or spectrogram)"
            ))),
        }
    }
}

/// Preprocessed frontend input. Augmentation and mixup act on this form.
#[derive(Clone, Debug, PartialEq)]
pub enum FrontendInput {
    Raw(Vec<f32>),
    Mel(MelSpectrogram),
}

/// Embedded tokens evaluated outside of any training tape.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T> {
    pub tokens: Tensor<T>,
    pub kind: FrontendKind,
}

impl<T: Real> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.last_dim()
    }
}

#[derive(Clone, Debug)]
pub struct Frontend {
    kind: FrontendKind,
    d: usize,
    conv_w: ParamId,
    conv_b: ParamId,
    norm_g: ParamId,
    norm_b: ParamId,
    mel: Option<MelExtractor>,
}

impl Frontend {
    pub fn new<T: Real>(
        kind: FrontendKind,
        d: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (shape, fan_in, mel) = match kind {
            FrontendKind::Raw => (vec![d, 1, RAW_FRAME], RAW_FRAME, None),
            FrontendKind::Spectrogram => (
                vec![d, 1, PATCH, PATCH],
                PATCH * PATCH,
                Some(MelExtractor::new(SAMPLE_RATE)?),
            ),
        };
        Ok(Self {
            kind,
            d,
            conv_w: store.add_uniform("frontend.conv.weight", &shape, fan_in, rng),
            conv_b: store.add_uniform("frontend.conv.bias", &[d], fan_in, rng),
            norm_g: store.add_const("frontend.norm.gamma", &[d], 1.0),
            norm_b: store.add_const("frontend.norm.beta", &[d], 0.0),
            mel,
        })
    }

    pub fn kind(&self) -> FrontendKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.conv_w, self.conv_b, self.norm_g, self.norm_b]
    }

    /// Converts a waveform to this frontend's input representation.
    pub fn prepare(&self, w: &Waveform) -> Result<FrontendInput> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "frontend expects {SAMPLE_RATE} Hz audio, got {} Hz",
                w.sample_rate
            )));
        }
        match &self.mel {
            None => Ok(FrontendInput::Raw(w.samples.clone())),
            Some(ex) => Ok(FrontendInput::Mel(ex.compute(&w.samples)?)),
        }
    }

    /// Token matrix `[L x d]` on `tape`.
    pub fn embed<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        bind: &Bindings,
        input: &FrontendInput,
    ) -> Result<Var> {
        let w = bind.var(self.conv_w);
        let b = bind.var(self.conv_b);
        let feats = match (self.kind, input) {
            (FrontendKind::Raw, FrontendInput::Raw(s)) => {
                if s.len() < RAW_FRAME {
                    return Err(Error::InputTooShort {
                        op: "embed_raw",
                        needed: RAW_FRAME,
                        got: s.len(),
                    });
                }
                let data = s.iter().map(|&v| T::of(v as f64)).collect();
                let x = tape.constant(Tensor::new(vec![1, s.len()], data)?)?;
                tape.conv1d(x, w, b, RAW_FRAME, Padding::None, false)?
            }
            (FrontendKind::Spectrogram, FrontendInput::Mel(m)) => {
                let padded = m.pad_frames_to_multiple(PATCH);
                let data = padded.data.iter().map(|&v| T::of(v)).collect();
                let x = tape.constant(Tensor::new(vec![1, padded.n_mels, padded.frames], data)?)?;
                let y = tape.conv2d(x, w, b, (PATCH, PATCH))?;
                let tokens = (padded.n_mels / PATCH) * (padded.frames / PATCH);
                tape.reshape(y, &[self.d, tokens])?
            }
            _ => {
                return Err(Error::Data(format!(
                    "input representation does not match the {} frontend",
                    self.kind
                )))
            }
        };
        let z = tape.transpose(feats)?;
        let (g, beta) = (bind.var(self.norm_g), bind.var(self.norm_b));
        tape.layer_norm(z, g, beta, T::of(LN_EPS))
    }

    /// Evaluates the frontend on `w` without recording gradients.
    pub fn tokens<T: Real>(&self, store: &ParamStore<T>, w: &Waveform) -> Result<TokenSequence<T>> {
        let input = self.prepare(w)?;
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let z = self.embed(&mut tape, &bind, &input)?;
        Ok(TokenSequence {
            tokens: tape.value(z).clone(),
            kind: self.kind,
        })
    }
}

/// Raw-path embedding of `w` with the parameters of `frontend`.
pub fn embed_raw<T: Real>(
    w: &Waveform,
    frontend: &Frontend,
    store: &ParamStore<T>,
) -> Result<TokenSequence<T>> {
    if frontend.kind != FrontendKind::Raw {
        return Err(Error::Config("embed_raw needs a raw frontend".into()));
    }
    frontend.tokens(store, w)
}

/// Spectrogram-path embedding of `w` with the parameters of `frontend`.
pub fn embed_spectrogram<T: Real>(
    w: &Waveform,
    frontend: &Frontend,
    store: &ParamStore<T>,
) -> Result<TokenSequence<T>> {
    if frontend.kind != FrontendKind::Spectrogram {
        return Err(Error::Config(
            "embed_spectrogram needs a spectrogram frontend".into(),
        ));
    }
    frontend.tokens(store, w)
}

/// Flattens a padded log-mel image into its patch grid, one row per token
/// in the order the patch convolution emits them (frequency-major).
pub fn patch_grid(m: &MelSpectrogram, p: usize) -> Result<Tensor<f64>> {
    if !m.n_mels.is_multiple_of(p) || !m.frames.is_multiple_of(p) {
        return Err(Error::shape(
            "patch_grid",
            format!("{}x{} is not a multiple of {p}", m.n_mels, m.frames),
        ));
    }
    let grid = [m.n_mels / p, m.frames / p];
    let cols = crate::autodiff::im2col_2d(&m.data, [1, m.n_mels, m.frames], [p, p], (p, p), grid);
    Tensor::new(vec![grid[0] * grid[1], p * p], cols)
}

/// Inverse of [`patch_grid`].
pub fn unpatch_grid(
    patches: &Tensor<f64>,
    n_mels: usize,
    frames: usize,
    p: usize,
) -> Result<MelSpectrogram> {
    let (tokens, width) = patches.dims2()?;
    let w_out = frames / p;
    if width != p * p
        || tokens * p * p != n_mels * frames
        || !n_mels.is_multiple_of(p)
        || !frames.is_multiple_of(p)
    {
        return Err(Error::shape(
            "unpatch_grid",
            format!("{:?} for {n_mels}x{frames} with patch {p}", patches.shape()),
        ));
    }
    let mut data = vec![0.0; n_mels * frames];
    for (tok, row) in patches.data().chunks(p * p).enumerate() {
        let (i, j) = (tok / w_out, tok % w_out);
        for u in 0..p {
            let dst = (i * p + u) * frames + j * p;
            data[dst..dst + p].copy_from_slice(&row[u * p..(u + 1) * p]);
        }
    }
    Ok(MelSpectrogram {
        n_mels,
        frames,
        data,
    })
}

/// Fixed sinusoidal position table `[L x d]`.
pub fn sinusoidal_positions<T: Real>(l: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(vec![l, d], |i| {
        let (pos, c) = ((i / d) as f64, i % d);
        let freq = 1.0 / 10_000f64.powf((c - c % 2) as f64 / d as f64);
        T::of(if c % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        })
    })
}
