use rand::Rng;

use super::ssm::{mamba_direction, SSMConfig, SelectiveSSMParams};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::frontend::LN_EPS;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Real;

/// Pre-norm bidirectional selective-SSM layer with a residual connection:
/// `x + [fwd(LN x) ; flip(bwd(flip(LN x)))] W_proj^T`.
#[derive(Clone, Debug)]
pub struct BiMambaBlock {
    pub fwd: SelectiveSSMParams,
    pub bwd: SelectiveSSMParams,
    /// `[d x 2d]`.
    pub w_proj: ParamId,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
}

impl BiMambaBlock {
    pub fn new<T: Real>(
        cfg: SSMConfig,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let norm_g = store.add_const(format!("{prefix}.norm.gamma"), &[d], 1.0);
        let norm_b = store.add_const(format!("{prefix}.norm.beta"), &[d], 0.0);
        let fwd = SelectiveSSMParams::new(cfg, store, &format!("{prefix}.fwd"), rng)?;
        let bwd = SelectiveSSMParams::new(cfg, store, &format!("{prefix}.bwd"), rng)?;
        let w_proj = store.add_uniform(format!("{prefix}.proj.weight"), &[d, 2 * d], 2 * d, rng);
        Ok(Self {
            fwd,
            bwd,
            w_proj,
            norm_g,
            norm_b,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.norm_g, self.norm_b];
        ids.extend(self.fwd.param_ids());
        ids.extend(self.bwd.param_ids());
        ids.push(self.w_proj);
        ids
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, bind: &Bindings, x: Var) -> Result<Var> {
        let h = tape.layer_norm(
            x,
            bind.var(self.norm_g),
            bind.var(self.norm_b),
            T::of(LN_EPS),
        )?;
        let y_fwd = mamba_direction(tape, bind, &self.fwd, h)?;
        let h_rev = tape.flip_rows(h)?;
        let y_bwd = mamba_direction(tape, bind, &self.bwd, h_rev)?;
        let y_bwd = tape.flip_rows(y_bwd)?;
        let cat = tape.concat_cols(&[y_fwd, y_bwd])?;
        let mixed = tape.matmul_ex(cat, bind.var(self.w_proj), false, true)?;
        tape.add(x, mixed)
    }
}
