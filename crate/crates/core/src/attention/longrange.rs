//! Long-range dependency attention: every output position is a softmax-weighted
//! sum over all positions along one axis, added back with a learned scale.
//!
//! The scale starts at zero, so a freshly built module is an exact identity.

use crate::error::Result;
use crate::nn::Conv2d;
use crate::ops::ConvGeometry;
use crate::params::{InitRule, ParamId, ParamStore};
use crate::tape::{Ctx, Var};

use super::{child, scaled_residual};

fn alpha(store: &mut ParamStore, name: &str) -> Result<ParamId> {
    store.register(&child(name, "alpha"), &[1], InitRule::Zeros)
}

fn projection(store: &mut ParamStore, name: &str, part: &str, cin: usize, cout: usize) -> Result<Conv2d> {
    Conv2d::new(store, &child(name, part), cin, cout, ConvGeometry::ONE, true)
}

/// Attention map and pre-residual output of one module.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    /// Row-stochastic weights, rows index the output position.
    pub map: Var,
}

/// Position attention over the `H·W` spatial locations.
#[derive(Clone, Debug)]
pub struct LongRangeSpatial {
    pub key: Conv2d,
    pub query: Conv2d,
    pub value: Conv2d,
    pub alpha: ParamId,
}

impl LongRangeSpatial {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let reduced = (channels / 8).max(1);
        Ok(Self {
            key: projection(store, name, "key", channels, reduced)?,
            query: projection(store, name, "query", channels, reduced)?,
            value: projection(store, name, "value", channels, channels)?,
            alpha: alpha(store, name)?,
        })
    }

    /// Map `[B, N, N]` with `map[j][i] ∝ exp(q_j · k_i)` and output `[B, C, H, W]`
    /// where `output[:, j] = Σ_i map[j][i] v_i`.
    pub fn attend(&self, ctx: &mut Ctx, x: Var) -> Result<Attended> {
        let (b, c, h, w) = ctx.value(x).dims4("spatial attention")?;
        let n = h * w;
        let k = self.key.forward(ctx, x)?;
        let q = self.query.forward(ctx, x)?;
        let v = self.value.forward(ctx, x)?;
        let r = self.key.out_channels;
        let k = ctx.tape.reshape(k, &[b, r, n])?;
        let q = ctx.tape.reshape(q, &[b, r, n])?;
        let qt = ctx.tape.permute(q, &[0, 2, 1])?;
        let logits = ctx.tape.matmul(qt, k)?;
        let map = ctx.tape.softmax(logits)?;
        let v = ctx.tape.reshape(v, &[b, c, n])?;
        let mt = ctx.tape.permute(map, &[0, 2, 1])?;
        let out = ctx.tape.matmul(v, mt)?;
        let output = ctx.tape.reshape(out, &[b, c, h, w])?;
        Ok(Attended { output, map })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let a = self.attend(ctx, x)?;
        scaled_residual(ctx, self.alpha, a.output, x)
    }
}

/// Channel attention: a `C × C` affinity from feature-map inner products.
#[derive(Clone, Debug)]
pub struct LongRangeChannel {
    pub alpha: ParamId,
}

impl LongRangeChannel {
    pub fn new(store: &mut ParamStore, name: &str) -> Result<Self> {
        Ok(Self { alpha: alpha(store, name)? })
    }

    /// Map `[B, C, C]` and output `[B, C, H, W]`.
    pub fn attend(&self, ctx: &mut Ctx, x: Var) -> Result<Attended> {
        let (b, c, h, w) = ctx.value(x).dims4("channel attention")?;
        let flat = ctx.tape.reshape(x, &[b, c, h * w])?;
        let ft = ctx.tape.permute(flat, &[0, 2, 1])?;
        let logits = ctx.tape.matmul(flat, ft)?;
        let map = ctx.tape.softmax(logits)?;
        let out = ctx.tape.matmul(map, flat)?;
        let output = ctx.tape.reshape(out, &[b, c, h, w])?;
        Ok(Attended { output, map })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let a = self.attend(ctx, x)?;
        scaled_residual(ctx, self.alpha, a.output, x)
    }
}

/// Joint attention over all `C'·H·W` entries of a reduced projection.
#[derive(Clone, Debug)]
pub struct LongRangeHyper {
    pub key: Conv2d,
    pub query: Conv2d,
    pub value: Conv2d,
    pub restore: Conv2d,
    pub alpha: ParamId,
}

impl LongRangeHyper {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let reduced = (channels / 64).max(1);
        Ok(Self {
            key: projection(store, name, "key", channels, reduced)?,
            query: projection(store, name, "query", channels, reduced)?,
            value: projection(store, name, "value", channels, reduced)?,
            restore: projection(store, name, "restore", reduced, channels)?,
            alpha: alpha(store, name)?,
        })
    }

    /// Map `[B, M, M]` with `M = C'·H·W`; the output is restored to `C` channels.
    pub fn attend(&self, ctx: &mut Ctx, x: Var) -> Result<Attended> {
        let (b, _, h, w) = ctx.value(x).dims4("hyper attention")?;
        let r = self.key.out_channels;
        let m = r * h * w;
        let k = self.key.forward(ctx, x)?;
        let q = self.query.forward(ctx, x)?;
        let v = self.value.forward(ctx, x)?;
        let k = ctx.tape.reshape(k, &[b, 1, m])?;
        let q = ctx.tape.reshape(q, &[b, m, 1])?;
        let v = ctx.tape.reshape(v, &[b, m, 1])?;
        let logits = ctx.tape.matmul(q, k)?;
        let map = ctx.tape.softmax(logits)?;
        let out = ctx.tape.matmul(map, v)?;
        let out = ctx.tape.reshape(out, &[b, r, h, w])?;
        let output = self.restore.forward(ctx, out)?;
        Ok(Attended { output, map })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let a = self.attend(ctx, x)?;
        scaled_residual(ctx, self.alpha, a.output, x)
    }
}

/// Attention across the samples of a batch.
///
/// The output of each sample depends on the rest of the batch, so eval-mode
/// results are not batch-composition independent for this variant.
#[derive(Clone, Debug)]
pub struct LongRangeBatch {
    pub alpha: ParamId,
}

impl LongRangeBatch {
    pub fn new(store: &mut ParamStore, name: &str) -> Result<Self> {
        Ok(Self { alpha: alpha(store, name)? })
    }

    /// Map `[B, B]` and output `[B, C, H, W]`.
    pub fn attend(&self, ctx: &mut Ctx, x: Var) -> Result<Attended> {
        let (b, c, h, w) = ctx.value(x).dims4("batch attention")?;
        let flat = ctx.tape.reshape(x, &[b, c * h * w])?;
        let ft = ctx.tape.transpose(flat)?;
        let logits = ctx.tape.matmul(flat, ft)?;
        let map = ctx.tape.softmax(logits)?;
        let out = ctx.tape.matmul(map, flat)?;
        let output = ctx.tape.reshape(out, &[b, c, h, w])?;
        Ok(Attended { output, map })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let a = self.attend(ctx, x)?;
        scaled_residual(ctx, self.alpha, a.output, x)
    }
}
