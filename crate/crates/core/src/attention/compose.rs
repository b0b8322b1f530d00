//! Combining a spatial and a channel module, and the convolution block used
//! on attention-skip branches.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d};
use crate::ops::ConvGeometry;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Ctx, Var};

use super::{child, ArrangementKind, DirectChannel, DirectSpatial, Family, LongRangeChannel, LongRangeSpatial};

#[derive(Clone, Debug)]
pub enum Members {
    LongRange { spatial: LongRangeSpatial, channel: LongRangeChannel },
    Direct { spatial: DirectSpatial, channel: DirectChannel },
}

/// A spatial and a channel module of the same family, each with its own parameters.
#[derive(Clone, Debug)]
pub struct Arrangement {
    pub kind: ArrangementKind,
    pub members: Members,
}

impl Arrangement {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        family: Family,
        kind: ArrangementKind,
        channels: usize,
    ) -> Result<Self> {
        let members = match family {
            Family::LongRange => {
                if kind == ArrangementKind::Multiply {
                    return Err(Error::Config("multiply arrangement needs explicit maps (direct family only)".into()));
                }
                Members::LongRange {
                    spatial: LongRangeSpatial::new(store, &child(name, "spatial"), channels)?,
                    channel: LongRangeChannel::new(store, &child(name, "channel"))?,
                }
            }
            Family::Direct => Members::Direct {
                spatial: DirectSpatial::new(store, &child(name, "spatial"))?,
                channel: DirectChannel::new(store, &child(name, "channel"), channels)?,
            },
        };
        Ok(Self { kind, members })
    }

    fn spatial(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match &self.members {
            Members::LongRange { spatial, .. } => spatial.forward(ctx, x),
            Members::Direct { spatial, .. } => spatial.forward(ctx, x),
        }
    }

    fn channel(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match &self.members {
            Members::LongRange { channel, .. } => channel.forward(ctx, x),
            Members::Direct { channel, .. } => channel.forward(ctx, x),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self.kind {
            ArrangementKind::Sc => {
                let s = self.spatial(ctx, x)?;
                self.channel(ctx, s)
            }
            ArrangementKind::Cs => {
                let c = self.channel(ctx, x)?;
                self.spatial(ctx, c)
            }
            ArrangementKind::Sum => {
                let s = self.spatial(ctx, x)?;
                let c = self.channel(ctx, x)?;
                ctx.tape.add(s, c)
            }
            ArrangementKind::Multiply => {
                let Members::Direct { spatial, channel } = &self.members else {
                    return Err(Error::Config("multiply arrangement needs explicit maps (direct family only)".into()));
                };
                let ms = spatial.map(ctx, x)?;
                let mc = channel.map(ctx, x)?;
                let joint = ctx.tape.mul(mc, ms)?;
                ctx.tape.mul(joint, x)
            }
        }
    }

    pub fn alphas(&self) -> Vec<ParamId> {
        match &self.members {
            Members::LongRange { spatial, channel } => alloc::vec![spatial.alpha, channel.alpha],
            Members::Direct { .. } => Vec::new(),
        }
    }
}

/// `conv3×3 → BN → ReLU → conv1×1 → BN → ReLU`, changing `in` channels to `out`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, &child(name, "conv1"), in_channels, out_channels, ConvGeometry::THREE, false)?,
            bn1: BatchNorm::new(store, &child(name, "bn1"), out_channels)?,
            conv2: Conv2d::new(store, &child(name, "conv2"), out_channels, out_channels, ConvGeometry::ONE, false)?,
            bn2: BatchNorm::new(store, &child(name, "bn2"), out_channels)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }
}
