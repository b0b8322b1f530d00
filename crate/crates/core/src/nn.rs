//! Parameterised layers built from the primitives in [`ops`](crate::ops).

use alloc::format;
use alloc::vec::Vec;

use crate::error::Result;
use crate::ops::norm::Normalize;
use crate::ops::ConvGeometry;
use crate::params::{BufferId, InitRule, ParamId, ParamStore};
use crate::tape::{Ctx, Mode, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeometry,
        bias: bool,
    ) -> Result<Self> {
        let k = geom.kind.size();
        let weight =
            store.register(&format!("{name}.weight"), &[out_channels, in_channels, k, k], InitRule::KaimingUniform)?;
        let bias =
            if bias { Some(store.register(&format!("{name}.bias"), &[out_channels], InitRule::Zeros)?) } else { None };
        Ok(Self { weight, bias, geom, in_channels, out_channels })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let y = ctx.tape.conv2d(x, w, self.geom)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                let b = ctx.tape.reshape(b, &[1, self.out_channels, 1, 1])?;
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Fully connected layer, `y = x Wᵀ + b` on `[B, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight =
            store.register(&format!("{name}.weight"), &[out_features, in_features], InitRule::KaimingUniform)?;
        let bias =
            if bias { Some(store.register(&format!("{name}.bias"), &[out_features], InitRule::Zeros)?) } else { None };
        Ok(Self { weight, bias, in_features, out_features })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let wt = ctx.tape.transpose(w)?;
        let y = ctx.tape.matmul(x, wt)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                let b = ctx.tape.reshape(b, &[1, self.out_features])?;
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Batch normalization with running statistics (initialised to mean 0, variance 1).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.register(&format!("{name}.weight"), &[channels], InitRule::BnDefault)?,
            beta: store.register(&format!("{name}.bias"), &[channels], InitRule::Zeros)?,
            running_mean: store.register_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.register_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?,
            channels,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = ctx.tape.batchnorm(x, gamma, beta, Normalize::Batch { eps: BN_EPS })?;
                let stats = stats.expect("batch statistics in train mode");
                let blend = |old: &Tensor, new: &[f64]| -> Vec<f64> {
                    old.data().iter().zip(new).map(|(o, n)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n).collect()
                };
                let mean = blend(ctx.buffer(self.running_mean), &stats.mean);
                let var = blend(ctx.buffer(self.running_var), &stats.var);
                ctx.record_update(self.running_mean, mean);
                ctx.record_update(self.running_var, var);
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.buffer(self.running_mean).data();
                let var = ctx.buffer(self.running_var).data();
                let (y, _) = ctx.tape.batchnorm(x, gamma, beta, Normalize::Running { mean, var, eps: BN_EPS })?;
                Ok(y)
            }
        }
    }
}
