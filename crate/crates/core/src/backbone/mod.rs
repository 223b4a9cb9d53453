//! Sequence-mixing layers and per-layer parameter matching.

mod attention;
mod bimamba;
mod ssm;


pub use attention::AttentionBlock;
pub use bimamba::BiMambaBlock;
pub use ssm::{mamba_direction, SSMConfig, SelectiveSSMParams};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Mamba,
    Attention,
}

impl LayerKind {
    pub fn symbol(self) -> char {
        match self {
            LayerKind::Mamba => 'M',
            LayerKind::Attention => 'A',
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Mamba(BiMambaBlock),
    Attention(AttentionBlock),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Mamba(_) => LayerKind::Mamba,
            Layer::Attention(_) => LayerKind::Attention,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Layer::Mamba(b) => b.param_ids(),
            Layer::Attention(b) => b.param_ids(),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, bind: &Bindings, x: Var) -> Result<Var> {
        match self {
            Layer::Mamba(b) => b.forward(tape, bind, x),
            Layer::Attention(b) => b.forward(tape, bind, x),
        }
    }
}

/// Number of scalar parameters owned by `layer`.
pub fn count_params<T: Real>(store: &ParamStore<T>, layer: &Layer) -> usize {
    store.numel(&layer.param_ids())
}

/// Closed-form count of a bidirectional SSM layer.
pub fn bimamba_params(cfg: &SSMConfig) -> usize {
    let d = cfg.d_model;
    2 * cfg.direction_params() + 2 * d * d + 2 * d
}

/// Closed-form count of an attention layer with FFN width `d_ffn`.
pub fn attention_params(d: usize, d_ffn: usize) -> usize {
    4 * d * d + 4 * d + 4 * d + 2 * d * d_ffn + d_ffn + d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBudget {
    pub p_mamba: usize,
    pub p_mha: usize,
    pub p_norms: usize,
    pub d_ffn: usize,
}

impl ParamBudget {
    /// Parameters the matched attention layer falls short by. The FFN's
    /// output bias is not in the divisor, so this can be negative by at
    /// most `d`.
    pub fn deficit(&self, d: usize) -> i64 {
        self.p_mamba as i64 - attention_params(d, self.d_ffn) as i64
    }
}

/// FFN width for which an attention layer matches `p_mamba` parameters:
/// `d_ffn = floor((P_mamba - P_MHA - P_norms) / (2d + 1))`.
pub fn solve_ffn_width(p_mamba: usize, d: usize) -> Result<ParamBudget> {
    let p_mha = 4 * d * d + 4 * d;
    let p_norms = 4 * d;
    let fixed = p_mha + p_norms;
    if p_mamba <= fixed {
        return Err(Error::Config(format!(
            "parameter budget {p_mamba} does not cover attention projections and norms ({fixed}) at d={d}"
        )));
    }
    let d_ffn = (p_mamba - fixed) / (2 * d + 1);
    if d_ffn == 0 {
        return Err(Error::Config(format!(
            "parameter budget {p_mamba} leaves no room for an FFN at d={d}"
        )));
    }
    Ok(ParamBudget {
        p_mamba,
        p_mha,
        p_norms,
        d_ffn,
    })
}
