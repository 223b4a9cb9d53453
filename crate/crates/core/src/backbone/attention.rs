use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::frontend::LN_EPS;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Real;

/// Pre-norm Transformer layer: multi-head self-attention followed by a GELU
/// feed-forward network, each with a residual connection.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub d: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm1_g: ParamId,
    pub norm1_b: ParamId,
    pub norm2_g: ParamId,
    pub norm2_b: ParamId,
}

impl AttentionBlock {
    pub fn new<T: Real, R: Rng>(
        d: usize,
        heads: usize,
        d_ffn: usize,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        if d_ffn == 0 {
            return Err(Error::Config("FFN width must be at least 1".into()));
        }
        let name = |s: &str| format!("{prefix}.{s}");
        let mut proj = |s: &str, rng: &mut R| {
            let w = store.add_uniform(name(&format!("{s}.weight")), &[d, d], d, rng);
            let b = store.add_uniform(name(&format!("{s}.bias")), &[d], d, rng);
            (w, b)
        };
        let (w_q, b_q) = proj("q", rng);
        let (w_k, b_k) = proj("k", rng);
        let (w_v, b_v) = proj("v", rng);
        let (w_o, b_o) = proj("o", rng);
        Ok(Self {
            d,
            heads,
            d_ffn,
            w_q,
            b_q,
            w_k,
            b_k,
            w_v,
            b_v,
            w_o,
            b_o,
            ffn_w1: store.add_uniform(name("ffn1.weight"), &[d, d_ffn], d, rng),
            ffn_b1: store.add_uniform(name("ffn1.bias"), &[d_ffn], d, rng),
            ffn_w2: store.add_uniform(name("ffn2.weight"), &[d_ffn, d], d_ffn, rng),
            ffn_b2: store.add_uniform(name("ffn2.bias"), &[d], d_ffn, rng),
            norm1_g: store.add_const(name("norm1.gamma"), &[d], 1.0),
            norm1_b: store.add_const(name("norm1.beta"), &[d], 0.0),
            norm2_g: store.add_const(name("norm2.gamma"), &[d], 1.0),
            norm2_b: store.add_const(name("norm2.beta"), &[d], 0.0),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_q,
            self.b_q,
            self.w_k,
            self.b_k,
            self.w_v,
            self.b_v,
            self.w_o,
            self.b_o,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
            self.norm1_g,
            self.norm1_b,
            self.norm2_g,
            self.norm2_b,
        ]
    }

    /// Multi-head attention on already-normalized input `h: [L x d]`.
    pub fn mha<T: Real>(&self, tape: &mut Tape<'_, T>, bind: &Bindings, h: Var) -> Result<Var> {
        let v = |id| bind.var(id);
        let q = tape.linear(h, v(self.w_q), Some(v(self.b_q)))?;
        let k = tape.linear(h, v(self.w_k), Some(v(self.b_k)))?;
        let val = tape.linear(h, v(self.w_v), Some(v(self.b_v)))?;
        let dh = self.d / self.heads;
        let inv = T::one() / T::of(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qh = tape.slice_cols(q, i * dh, dh)?;
            let kh = tape.slice_cols(k, i * dh, dh)?;
            let vh = tape.slice_cols(val, i * dh, dh)?;
            let scores = tape.matmul_ex(qh, kh, false, true)?;
            let scores = tape.scale(scores, inv)?;
            let weights = tape.softmax_rows(scores)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let cat = tape.concat_cols(&outs)?;
        tape.linear(cat, v(self.w_o), Some(v(self.b_o)))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, bind: &Bindings, x: Var) -> Result<Var> {
        let v = |id| bind.var(id);
        let eps = T::of(LN_EPS);
        let h = tape.layer_norm(x, v(self.norm1_g), v(self.norm1_b), eps)?;
        let m = self.mha(tape, bind, h)?;
        let a = tape.add(x, m)?;
        let h2 = tape.layer_norm(a, v(self.norm2_g), v(self.norm2_b), eps)?;
        let f = tape.linear(h2, v(self.ffn_w1), Some(v(self.ffn_b1)))?;
        let f = tape.gelu(f)?;
        let f = tape.linear(f, v(self.ffn_w2), Some(v(self.ffn_b2)))?;
        tape.add(a, f)
    }
}
