//! Direct-generation attention: a weight map is produced from pooled
//! statistics, normalised with a softmax, and multiplied into the input.

use crate::error::Result;
use crate::nn::Conv2d;
use crate::ops::{ConvGeometry, PoolMode};
use crate::params::ParamStore;
use crate::tape::{Ctx, Var};

use super::child;

/// Spatial map `[B, 1, H, W]` from channel-wise average and max.
#[derive(Clone, Debug)]
pub struct DirectSpatial {
    pub merge: Conv2d,
}

impl DirectSpatial {
    pub fn new(store: &mut ParamStore, name: &str) -> Result<Self> {
        Ok(Self { merge: Conv2d::new(store, &child(name, "merge"), 2, 1, ConvGeometry::THREE, true)? })
    }

    /// Softmax over the `H·W` locations of each sample.
    pub fn map(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (b, _, h, w) = ctx.value(x).dims4("direct spatial attention")?;
        let avg = ctx.tape.pool(x, PoolMode::ChannelAvg)?;
        let max = ctx.tape.pool(x, PoolMode::ChannelMax)?;
        let both = ctx.tape.concat(&[avg, max], 1)?;
        let logits = self.merge.forward(ctx, both)?;
        let logits = ctx.tape.reshape(logits, &[b, h * w])?;
        let map = ctx.tape.softmax(logits)?;
        ctx.tape.reshape(map, &[b, 1, h, w])
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let m = self.map(ctx, x)?;
        ctx.tape.mul(x, m)
    }
}

/// Channel map `[B, C, 1, 1]` from a shared bottleneck over global average and max.
#[derive(Clone, Debug)]
pub struct DirectChannel {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl DirectChannel {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let hidden = (channels / 16).max(1);
        Ok(Self {
            reduce: Conv2d::new(store, &child(name, "reduce"), channels, hidden, ConvGeometry::ONE, true)?,
            expand: Conv2d::new(store, &child(name, "expand"), hidden, channels, ConvGeometry::ONE, true)?,
        })
    }

    fn mlp(&self, ctx: &mut Ctx, pooled: Var, b: usize, c: usize) -> Result<Var> {
        let p = ctx.tape.reshape(pooled, &[b, c, 1, 1])?;
        let hdn = self.reduce.forward(ctx, p)?;
        let hdn = ctx.tape.relu(hdn);
        self.expand.forward(ctx, hdn)
    }

    /// Softmax over the `C` channels of each sample.
    pub fn map(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (b, c, _, _) = ctx.value(x).dims4("direct channel attention")?;
        let avg = ctx.tape.pool(x, PoolMode::GlobalAvg)?;
        let max = ctx.tape.pool(x, PoolMode::GlobalMax)?;
        let a = self.mlp(ctx, avg, b, c)?;
        let m = self.mlp(ctx, max, b, c)?;
        let logits = ctx.tape.add(a, m)?;
        let logits = ctx.tape.reshape(logits, &[b, c])?;
        let map = ctx.tape.softmax(logits)?;
        ctx.tape.reshape(map, &[b, c, 1, 1])
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let m = self.map(ctx, x)?;
        ctx.tape.mul(x, m)
    }
}

/// Softmax over every `C·H·W` entry of the input itself; no parameters.
#[derive(Clone, Copy, Debug)]
pub struct DirectHyper;

impl DirectHyper {
    pub fn map(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let (b, c, h, w) = ctx.value(x).dims4("direct hyper attention")?;
        let flat = ctx.tape.reshape(x, &[b, c * h * w])?;
        let map = ctx.tape.softmax(flat)?;
        ctx.tape.reshape(map, &shape)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let m = self.map(ctx, x)?;
        ctx.tape.mul(x, m)
    }
}
