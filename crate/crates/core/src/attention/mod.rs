//! Attention modules.
//!
//! Two families are provided. [`longrange`] modules compute every output
//! position as a softmax-weighted sum over all positions and add the result
//! back onto the input with a learned scale that starts at zero. [`direct`]
//! modules generate a softmax-normalised weight map from pooled statistics
//! and multiply it into the input. [`compose`] arranges a spatial and a
//! channel module sequentially, in parallel, or (direct family only) by
//! multiplying their maps.
//!
//! Every module keeps the input shape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Ctx, Var};

pub mod compose;
pub mod direct;
pub mod longrange;

pub use compose::{Arrangement, ConvBlock};
pub use direct::{DirectChannel, DirectHyper, DirectSpatial};
pub use longrange::{LongRangeBatch, LongRangeChannel, LongRangeHyper, LongRangeSpatial};

/// Type I (long-range dependency) or Type II (direct generation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    LongRange,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Spatial,
    Channel,
    Hyper,
    Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArrangementKind {
    /// spatial, then channel
    Sc,
    /// channel, then spatial
    Cs,
    /// both in parallel, summed
    Sum,
    /// product of the two maps applied once (direct family only)
    Multiply,
}

/// Closed description of an attention variant, serialised as `1s`, `2sum`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionSpec {
    Single(Family, Axis),
    Arranged(Family, ArrangementKind),
}

impl AttentionSpec {
    pub const ALL: [AttentionSpec; 14] = {
        use ArrangementKind as K;
        use AttentionSpec::*;
        use Axis as A;
        use Family as F;
        [
            Single(F::LongRange, A::Spatial),
            Single(F::LongRange, A::Channel),
            Single(F::LongRange, A::Hyper),
            Single(F::LongRange, A::Batch),
            Single(F::Direct, A::Spatial),
            Single(F::Direct, A::Channel),
            Single(F::Direct, A::Hyper),
            Arranged(F::LongRange, K::Sc),
            Arranged(F::LongRange, K::Cs),
            Arranged(F::LongRange, K::Sum),
            Arranged(F::Direct, K::Sc),
            Arranged(F::Direct, K::Cs),
            Arranged(F::Direct, K::Sum),
            Arranged(F::Direct, K::Multiply),
        ]
    };

    pub fn family(&self) -> Family {
        match *self {
            AttentionSpec::Single(f, _) | AttentionSpec::Arranged(f, _) => f,
        }
    }

    /// Batch attention mixes samples, so its output depends on batch composition.
    pub fn is_batch_dependent(&self) -> bool {
        matches!(self, AttentionSpec::Single(_, Axis::Batch))
    }

    fn validate(self) -> Result<Self> {
        match self {
            AttentionSpec::Single(Family::Direct, Axis::Batch) => {
                Err(Error::Config("batch attention exists only in the long-range family".into()))
            }
            AttentionSpec::Arranged(Family::LongRange, ArrangementKind::Multiply) => {
                Err(Error::Config("multiply arrangement needs explicit maps (direct family only)".into()))
            }
            ok => Ok(ok),
        }
    }
}

impl fmt::Display for AttentionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family() {
            Family::LongRange => '1',
            Family::Direct => '2',
        };
        let tail = match self {
            AttentionSpec::Single(_, Axis::Spatial) => "s",
            AttentionSpec::Single(_, Axis::Channel) => "c",
            AttentionSpec::Single(_, Axis::Hyper) => "h",
            AttentionSpec::Single(_, Axis::Batch) => "b",
            AttentionSpec::Arranged(_, ArrangementKind::Sc) => "sc",
            AttentionSpec::Arranged(_, ArrangementKind::Cs) => "cs",
            AttentionSpec::Arranged(_, ArrangementKind::Sum) => "sum",
            AttentionSpec::Arranged(_, ArrangementKind::Multiply) => "multiply",
        };
        write!(f, "{fam}{tail}")
    }
}

impl FromStr for AttentionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_err = |position| Error::Parse {
            input: s.into(),
            position,
            expected: "attention variant such as 1s, 1c, 1h, 1b, 2s, 1sum, 2multiply",
        };
        let family = match s.as_bytes().first() {
            Some(b'1') => Family::LongRange,
            Some(b'2') => Family::Direct,
            _ => return Err(parse_err(0)),
        };
        let spec = match &s[1..] {
            "s" => AttentionSpec::Single(family, Axis::Spatial),
            "c" => AttentionSpec::Single(family, Axis::Channel),
            "h" => AttentionSpec::Single(family, Axis::Hyper),
            "b" => AttentionSpec::Single(family, Axis::Batch),
            "sc" => AttentionSpec::Arranged(family, ArrangementKind::Sc),
            "cs" => AttentionSpec::Arranged(family, ArrangementKind::Cs),
            "sum" => AttentionSpec::Arranged(family, ArrangementKind::Sum),
            "multiply" => AttentionSpec::Arranged(family, ArrangementKind::Multiply),
            _ => return Err(parse_err(1)),
        };
        spec.validate().map_err(|_| parse_err(1))
    }
}

/// A built attention module of any variant.
#[derive(Clone, Debug)]
pub enum Attention {
    LongRangeSpatial(LongRangeSpatial),
    LongRangeChannel(LongRangeChannel),
    LongRangeHyper(LongRangeHyper),
    LongRangeBatch(LongRangeBatch),
    DirectSpatial(DirectSpatial),
    DirectChannel(DirectChannel),
    DirectHyper(DirectHyper),
    Arranged(Arrangement),
}

impl Attention {
    pub fn build(store: &mut ParamStore, name: &str, spec: AttentionSpec, channels: usize) -> Result<Self> {
        let spec = spec.validate()?;
        Ok(match spec {
            AttentionSpec::Single(Family::LongRange, Axis::Spatial) => {
                Attention::LongRangeSpatial(LongRangeSpatial::new(store, name, channels)?)
            }
            AttentionSpec::Single(Family::LongRange, Axis::Channel) => {
                Attention::LongRangeChannel(LongRangeChannel::new(store, name)?)
            }
            AttentionSpec::Single(Family::LongRange, Axis::Hyper) => {
                Attention::LongRangeHyper(LongRangeHyper::new(store, name, channels)?)
            }
            AttentionSpec::Single(Family::LongRange, Axis::Batch) => {
                Attention::LongRangeBatch(LongRangeBatch::new(store, name)?)
            }
            AttentionSpec::Single(Family::Direct, Axis::Spatial) => {
                Attention::DirectSpatial(DirectSpatial::new(store, name)?)
            }
            AttentionSpec::Single(Family::Direct, Axis::Channel) => {
                Attention::DirectChannel(DirectChannel::new(store, name, channels)?)
            }
            AttentionSpec::Single(Family::Direct, Axis::Hyper) => Attention::DirectHyper(DirectHyper),
            AttentionSpec::Single(Family::Direct, Axis::Batch) => unreachable!("rejected by validate"),
            AttentionSpec::Arranged(family, kind) => {
                Attention::Arranged(Arrangement::new(store, name, family, kind, channels)?)
            }
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Attention::LongRangeSpatial(m) => m.forward(ctx, x),
            Attention::LongRangeChannel(m) => m.forward(ctx, x),
            Attention::LongRangeHyper(m) => m.forward(ctx, x),
            Attention::LongRangeBatch(m) => m.forward(ctx, x),
            Attention::DirectSpatial(m) => m.forward(ctx, x),
            Attention::DirectChannel(m) => m.forward(ctx, x),
            Attention::DirectHyper(m) => m.forward(ctx, x),
            Attention::Arranged(m) => m.forward(ctx, x),
        }
    }

    /// The residual scale parameters of every long-range member.
    pub fn alphas(&self) -> Vec<ParamId> {
        match self {
            Attention::LongRangeSpatial(m) => alloc::vec![m.alpha],
            Attention::LongRangeChannel(m) => alloc::vec![m.alpha],
            Attention::LongRangeHyper(m) => alloc::vec![m.alpha],
            Attention::LongRangeBatch(m) => alloc::vec![m.alpha],
            Attention::Arranged(a) => a.alphas(),
            _ => Vec::new(),
        }
    }
}

/// `alpha * branch + input`, with `alpha` a one-element parameter.
pub(crate) fn scaled_residual(ctx: &mut Ctx, alpha: ParamId, branch: Var, input: Var) -> Result<Var> {
    let rank = ctx.tape.shape(input).len();
    let a = ctx.param(alpha);
    let a = ctx.tape.reshape(a, &alloc::vec![1; rank])?;
    let scaled = ctx.tape.mul(branch, a)?;
    ctx.tape.add(scaled, input)
}

pub(crate) fn child(name: &str, part: &str) -> String {
    format!("{name}.{part}")
}
