//! Full classifiers: frontend, layer stack, final norm and pooled head.

mod checkpoint;
mod config;

#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, read_tensors, save_checkpoint, write_tensors};
pub use config::{ModelConfig, PoolK, Variant, MODEL_KEYS};

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::backbone::{
    bimamba_params, solve_ffn_width, AttentionBlock, BiMambaBlock, Layer, LayerKind, ParamBudget,
};
use crate::error::{Error, Result};
use crate::frontend::{sinusoidal_positions, Frontend, FrontendInput, TokenSequence, LN_EPS};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::rng::substream;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub frontend: Frontend,
    pub layers: Vec<Layer>,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    /// `[n_classes x d]`.
    pub w_cls: ParamId,
    pub b_cls: ParamId,
    /// Present whenever the stack contains an attention layer.
    pub budget: Option<ParamBudget>,
}

impl<T: Real> Model<T> {
    /// Builds and initializes a model from the `init` stream of `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_with_rng(cfg, &mut substream(seed, "init"))
    }

    pub fn build_with_rng(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut store = ParamStore::new();
        let frontend = Frontend::new(cfg.frontend, d, &mut store, rng)?;
        let layout = cfg.layout();
        let budget = if layout.contains(&LayerKind::Attention) {
            Some(solve_ffn_width(bimamba_params(&cfg.ssm()), d)?)
        } else {
            None
        };
        let mut layers = Vec::with_capacity(layout.len());
        for (i, kind) in layout.into_iter().enumerate() {
            let prefix = format!("layers.{i}");
            layers.push(match kind {
                LayerKind::Mamba => {
                    Layer::Mamba(BiMambaBlock::new(cfg.ssm(), &mut store, &prefix, rng)?)
                }
                LayerKind::Attention => {
                    let d_ffn = budget.expect("attention layers imply a budget").d_ffn;
                    Layer::Attention(AttentionBlock::new(
                        d, cfg.heads, d_ffn, &mut store, &prefix, rng,
                    )?)
                }
            });
        }
        let norm_g = store.add_const("head.norm.gamma", &[d], 1.0);
        let norm_b = store.add_const("head.norm.beta", &[d], 0.0);
        let w_cls = store.add_uniform("head.cls.weight", &[cfg.n_classes, d], d, rng);
        let b_cls = store.add_uniform("head.cls.bias", &[cfg.n_classes], d, rng);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            frontend,
            layers,
            norm_g,
            norm_b,
            w_cls,
            b_cls,
            budget,
        })
    }

    pub fn layout(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn total_params(&self) -> usize {
        self.store.total_numel()
    }

    pub fn frontend_params(&self) -> usize {
        self.store.numel(&self.frontend.param_ids())
    }

    pub fn head_params(&self) -> usize {
        self.store
            .numel(&[self.norm_g, self.norm_b, self.w_cls, self.b_cls])
    }

    pub fn layer_params(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| self.store.numel(&l.param_ids()))
            .collect()
    }

    /// Frontend input for `w`.
    pub fn prepare(&self, w: &crate::frontend::Waveform) -> Result<FrontendInput> {
        self.frontend.prepare(w)
    }

    /// Tokens `[L x d]` for `input`, with positions added when enabled.
    pub fn embed(
        &self,
        tape: &mut Tape<'_, T>,
        bind: &Bindings,
        input: &FrontendInput,
    ) -> Result<Var> {
        let z = self.frontend.embed(tape, bind, input)?;
        self.add_positions(tape, z)
    }

    fn add_positions(&self, tape: &mut Tape<'_, T>, z: Var) -> Result<Var> {
        if !self.cfg.positional_encoding {
            return Ok(z);
        }
        let (l, d) = tape.value(z).dims2()?;
        let pe = tape.constant(sinusoidal_positions(l, d))?;
        tape.add(z, pe)
    }

    /// Runs the layer stack on tokens `[L x d]`.
    pub fn backbone(&self, tape: &mut Tape<'_, T>, bind: &Bindings, tokens: Var) -> Result<Var> {
        let d = tape.value(tokens).dims2()?.1;
        if d != self.cfg.d_model {
            return Err(Error::shape(
                "forward",
                format!("token width {d} but model width {}", self.cfg.d_model),
            ));
        }
        let mut x = tokens;
        for layer in &self.layers {
            x = layer.forward(tape, bind, x)?;
        }
        Ok(x)
    }

    /// Final norm, mean over the first `K` tokens and the linear classifier.
    /// Returns logits `[1 x n_classes]`.
    pub fn head(&self, tape: &mut Tape<'_, T>, bind: &Bindings, hidden: Var) -> Result<Var> {
        let (l, _) = tape.value(hidden).dims2()?;
        let k = self.cfg.pool.resolve(l)?;
        let h = tape.layer_norm(
            hidden,
            bind.var(self.norm_g),
            bind.var(self.norm_b),
            T::of(LN_EPS),
        )?;
        let pooled = tape.mean_rows(h, k)?;
        let z = tape.matmul_ex(pooled, bind.var(self.w_cls), false, true)?;
        tape.add_bias(z, bind.var(self.b_cls))
    }

    /// Logits for already-embedded tokens `[L x d]` on `tape`.
    pub fn forward_tokens(
        &self,
        tape: &mut Tape<'_, T>,
        bind: &Bindings,
        tokens: Var,
    ) -> Result<Var> {
        let h = self.backbone(tape, bind, tokens)?;
        self.head(tape, bind, h)
    }

    /// Logits for a frontend input on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        bind: &Bindings,
        input: &FrontendInput,
    ) -> Result<Var> {
        let z = self.embed(tape, bind, input)?;
        self.forward_tokens(tape, bind, z)
    }

    /// Logits for an embedded token sequence, evaluated without gradients.
    pub fn logits(&self, tokens: &TokenSequence<T>) -> Result<Tensor<T>> {
        if tokens.kind != self.cfg.frontend {
            return Err(Error::Config(format!(
                "tokens come from the {} frontend, model uses {}",
                tokens.kind, self.cfg.frontend
            )));
        }
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let z = tape.constant(tokens.tokens.clone())?;
        let z = self.add_positions(&mut tape, z)?;
        let y = self.forward_tokens(&mut tape, &bind, z)?;
        Ok(tape.value(y).clone())
    }

    /// Logits for a frontend input, evaluated without gradients.
    pub fn predict(&self, input: &FrontendInput) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let y = self.forward(&mut tape, &bind, input)?;
        Ok(tape.value(y).clone())
    }
}

/// Index of the largest logit.
pub fn argmax<T: Real>(logits: &[T]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}
