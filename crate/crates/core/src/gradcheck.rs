//! Central finite-difference verification of analytic gradients.
//!
//! The checker only ever calls the forward closure; it never looks at the
//! backward rules it is validating.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bindings, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error. Entries whose gradient is
    /// below it are compared in absolute terms; a step of 1e-5 cannot
    /// resolve a difference much below 1e-10 through a deep f64 graph.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-5,
            max_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape's gradients of `loss` against central differences for
/// every parameter in `store`.
pub fn check_gradients<F>(
    store: &mut ParamStore<f64>,
    loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &Bindings) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let l = loss(&mut tape, &b)?;
        let grads = tape.backward(l)?;
        b.collect(store, grads)
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let l = loss(&mut tape, &b)?;
        Ok(tape.value(l).data()[0])
    };

    let ids: Vec<_> = store.ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = store.get(id).numel();
        let picks: Vec<usize> = match opts.max_per_tensor {
            Some(m) if m < numel => (0..m).map(|i| i * numel / m).collect(),
            _ => (0..numel).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &picks {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + opts.step;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - opts.step;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[id.index()].data()[i];
            worst = worst.max(rel_error(a, numeric, opts.floor));
        }
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { tensors })
}

/// Building blocks covered by [`check_block`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    RawFrontend,
    SpectrogramFrontend,
    BiMamba,
    Attention,
    /// A full hybrid classifier with three classes.
    Model,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::RawFrontend,
        Block::SpectrogramFrontend,
        Block::BiMamba,
        Block::Attention,
        Block::Model,
    ];
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Block::RawFrontend => "raw",
            Block::SpectrogramFrontend => "spectrogram",
            Block::BiMamba => "bimamba",
            Block::Attention => "attention",
            Block::Model => "model",
        })
    }
}

impl std::str::FromStr for Block {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "raw" => Block::RawFrontend,
            "spectrogram" | "spec" => Block::SpectrogramFrontend,
            "bimamba" | "mamba" => Block::BiMamba,
            "attention" => Block::Attention,
            "model" | "helix" | "hybrid" => Block::Model,
            _ => {
                return Err(crate::Error::Config(format!(
                    "unknown block `{s}` (raw, spectrogram, bimamba, attention, model)"
                )))
            }
        })
    }
}

/// Checks `block` at width `d` on `length` tokens of random input. Blocks
/// are reduced to a scalar with fixed random weights; the model uses a
/// cross-entropy loss. Tensors are sampled at 64 evenly spaced entries.
pub fn check_block(block: Block, length: usize, d: usize, seed: u64) -> Result<GradCheckReport> {
    use rand::Rng;

    use crate::backbone::{
        bimamba_params, solve_ffn_width, AttentionBlock, BiMambaBlock, SSMConfig,
    };
    use crate::frontend::{
        Frontend, FrontendInput, FrontendKind, MelSpectrogram, PATCH, RAW_FRAME,
    };
    use crate::model::{Model, ModelConfig, Variant};
    use crate::rng::substream;
    use crate::tensor::Tensor;

    if length == 0 || d == 0 {
        return Err(crate::Error::Config(
            "grad check needs positive length and width".into(),
        ));
    }
    let opts = GradCheckOptions {
        max_per_tensor: Some(64),
        ..Default::default()
    };
    let mut init = substream(seed, "init");
    let mut data = substream(seed, "data");
    let raw: Vec<f32> = (0..length * RAW_FRAME)
        .map(|_| data.random_range(-0.5f32..0.5))
        .collect();
    let tokens = Tensor::<f64>::from_fn(vec![length, d], |_| data.random_range(-1.0..1.0));
    let probe = Tensor::<f64>::from_fn(vec![length, d], |_| data.random_range(-1.0..1.0));
    // Probe weights cycle when the block emits more than `length` tokens.
    let reduce = |tape: &mut Tape<'_, f64>, y: Var| -> Result<Var> {
        let n = tape.value(y).numel();
        let w = tape.constant(Tensor::new(
            tape.shape(y).to_vec(),
            probe.data().iter().cycle().take(n).copied().collect(),
        )?)?;
        let p = tape.mul(y, w)?;
        tape.sum(p)
    };
    let mut store = ParamStore::new();
    match block {
        Block::RawFrontend | Block::SpectrogramFrontend => {
            let kind = if block == Block::RawFrontend {
                FrontendKind::Raw
            } else {
                FrontendKind::Spectrogram
            };
            let fe = Frontend::new(kind, d, &mut store, &mut init)?;
            let input = match kind {
                FrontendKind::Raw => FrontendInput::Raw(raw),
                FrontendKind::Spectrogram => {
                    // 128 mel bands give 8 patch rows; frames hold the rest.
                    let cols = length.div_ceil(128 / PATCH);
                    let frames = cols * PATCH;
                    FrontendInput::Mel(MelSpectrogram {
                        n_mels: 128,
                        frames,
                        data: (0..128 * frames)
                            .map(|_| data.random_range(-8.0..2.0))
                            .collect(),
                    })
                }
            };
            check_gradients(
                &mut store,
                |tape, bind| {
                    let y = fe.embed(tape, bind, &input)?;
                    reduce(tape, y)
                },
                &opts,
            )
        }
        Block::BiMamba => {
            let b = BiMambaBlock::new(SSMConfig::new(d), &mut store, "bimamba", &mut init)?;
            check_gradients(
                &mut store,
                |tape, bind| {
                    let x = tape.constant(tokens.clone())?;
                    let y = b.forward(tape, bind, x)?;
                    reduce(tape, y)
                },
                &opts,
            )
        }
        Block::Attention => {
            let d_ffn = solve_ffn_width(bimamba_params(&SSMConfig::new(d)), d)?.d_ffn;
            let a = AttentionBlock::new(d, 4, d_ffn, &mut store, "attention", &mut init)?;
            check_gradients(
                &mut store,
                |tape, bind| {
                    let x = tape.constant(tokens.clone())?;
                    let y = a.forward(tape, bind, x)?;
                    reduce(tape, y)
                },
                &opts,
            )
        }
        Block::Model => {
            let cfg = ModelConfig {
                d_model: d,
                variant: Variant::Hybrid,
                n_classes: 3,
                ..ModelConfig::default()
            };
            let mut m = Model::<f64>::build_with_rng(&cfg, &mut init)?;
            let arch = m.clone();
            let input = FrontendInput::Raw(raw);
            check_gradients(
                &mut m.store,
                |tape, bind| {
                    let y = arch.forward(tape, bind, &input)?;
                    tape.soft_cross_entropy(y, &[0.2, 0.5, 0.3])
                },
                &opts,
            )
        }
    }
}
