//! One direction of a selective state-space layer.

use rand::Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SSMConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
}

impl SSMConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            d_state: 32,
            d_conv: 4,
            expand: 2,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.d_conv == 0 || self.expand == 0 {
            return Err(Error::Config(format!(
                "SSM sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count of one direction.
    pub fn direction_params(&self) -> usize {
        let (d, di, n, r, k) = (
            self.d_model,
            self.d_inner(),
            self.d_state,
            self.dt_rank(),
            self.d_conv,
        );
        d * 2 * di          // in_proj
            + di * k + di   // depthwise conv
            + di * r        // x -> dt (low rank)
            + r * di + di   // dt -> delta
            + 2 * di * n    // x -> B, x -> C
            + di * n        // A_log
            + di            // D
            + di * d // out_proj
    }
}

/// Parameters of one scan direction. Weights are stored `[in x out]`.
#[derive(Clone, Debug)]
pub struct SelectiveSSMParams {
    pub cfg: SSMConfig,
    pub w_in: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub w_x_dt: ParamId,
    pub w_dt: ParamId,
    pub b_dt: ParamId,
    pub w_x_b: ParamId,
    pub w_x_c: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub w_out: ParamId,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl SelectiveSSMParams {
    pub fn new<T: Real>(
        cfg: SSMConfig,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, di, n, r, k) = (
            cfg.d_model,
            cfg.d_inner(),
            cfg.d_state,
            cfg.dt_rank(),
            cfg.d_conv,
        );
        let name = |s: &str| format!("{prefix}.{s}");
        let w_in = store.add_uniform(name("in_proj.weight"), &[d, 2 * di], d, rng);
        let conv_w = store.add_uniform(name("conv.weight"), &[di, 1, k], k, rng);
        let conv_b = store.add_uniform(name("conv.bias"), &[di], k, rng);
        let w_x_dt = store.add_uniform(name("x_to_dt.weight"), &[di, r], di, rng);
        let w_dt = store.add_uniform(name("dt_proj.weight"), &[r, di], r, rng);
        // Initial step sizes log-uniform in [1e-3, 1e-1].
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let bias = Tensor::from_fn(vec![di], |_| {
            T::of(inverse_softplus(rng.random_range(lo..hi).exp()))
        });
        let b_dt = store.add(name("dt_proj.bias"), bias);
        let w_x_b = store.add_uniform(name("x_to_b.weight"), &[di, n], di, rng);
        let w_x_c = store.add_uniform(name("x_to_c.weight"), &[di, n], di, rng);
        let a_log = store.add(
            name("a_log"),
            Tensor::from_fn(vec![di, n], |i| T::of(((i % n) + 1) as f64).ln()),
        );
        let d_skip = store.add_const(name("d_skip"), &[di], 1.0);
        let w_out = store.add_uniform(name("out_proj.weight"), &[di, d], di, rng);
        Ok(Self {
            cfg,
            w_in,
            conv_w,
            conv_b,
            w_x_dt,
            w_dt,
            b_dt,
            w_x_b,
            w_x_c,
            a_log,
            d_skip,
            w_out,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_in,
            self.conv_w,
            self.conv_b,
            self.w_x_dt,
            self.w_dt,
            self.b_dt,
            self.w_x_b,
            self.w_x_c,
            self.a_log,
            self.d_skip,
            self.w_out,
        ]
    }
}

/// Causal selective-SSM mixing of `x: [L x d]`, returning `[L x d]`.
pub fn mamba_direction<T: Real>(
    tape: &mut Tape<'_, T>,
    bind: &Bindings,
    p: &SelectiveSSMParams,
    x: Var,
) -> Result<Var> {
    let di = p.cfg.d_inner();
    let v = |id| bind.var(id);
    let xz = tape.matmul(x, v(p.w_in))?;
    let stream = tape.slice_cols(xz, 0, di)?;
    let gate = tape.slice_cols(xz, di, di)?;

    let s = tape.transpose(stream)?;
    let s = tape.conv1d(s, v(p.conv_w), v(p.conv_b), 1, Padding::CausalLeft, true)?;
    let s = tape.transpose(s)?;
    let u = tape.silu(s)?;

    let dt = tape.matmul(u, v(p.w_x_dt))?;
    let dt = tape.linear(dt, v(p.w_dt), Some(v(p.b_dt)))?;
    let delta = tape.softplus(dt)?;
    let b = tape.matmul(u, v(p.w_x_b))?;
    let c = tape.matmul(u, v(p.w_x_c))?;
    let a = tape.exp(v(p.a_log))?;
    let a = tape.scale(a, -T::one())?;

    let y = tape.selective_scan(u, delta, a, b, c, v(p.d_skip))?;
    let g = tape.silu(gate)?;
    let y = tape.mul(y, g)?;
    tape.matmul(y, v(p.w_out))
}
