//! Global (over H×W) and channel-wise (over C) max/average pooling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::{dims4, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// `[B, C, H, W] -> [B, C]`
    GlobalMax,
    GlobalAvg,
    /// `[B, C, H, W] -> [B, 1, H, W]`
    ChannelMax,
    ChannelAvg,
}

pub(crate) struct PoolRecord {
    x: Var,
    mode: PoolMode,
    /// Winning flat input index per output element (max modes only).
    argmax: Vec<usize>,
}

pub(crate) fn pool_backward(tape: &Tape, rec: &PoolRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let x = tape.value(rec.x);
    let (_, c, h, w) = x.dims4("pool").unwrap();
    let hw = h * w;
    let acc = slot(grads, rec.x, x.numel());
    match rec.mode {
        PoolMode::GlobalMax | PoolMode::ChannelMax => {
            for (&i, gi) in rec.argmax.iter().zip(g) {
                acc[i] += gi;
            }
        }
        PoolMode::GlobalAvg => {
            for (o, gi) in g.iter().enumerate() {
                acc[o * hw..(o + 1) * hw].iter_mut().for_each(|a| *a += gi / hw as f64);
            }
        }
        PoolMode::ChannelAvg => {
            for (o, gi) in g.iter().enumerate() {
                let (s, p) = (o / hw, o % hw);
                for ch in 0..c {
                    acc[(s * c + ch) * hw + p] += gi / c as f64;
                }
            }
        }
    }
}

impl Tape {
    pub fn pool(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let t = self.value(x);
        let (b, c, h, w) = dims4(t.shape(), "pool")?;
        let hw = h * w;
        let d = t.data();
        let mut argmax = Vec::new();
        let (shape, out) = match mode {
            PoolMode::GlobalMax | PoolMode::GlobalAvg => {
                let mut out = Vec::with_capacity(b * c);
                for o in 0..b * c {
                    let plane = &d[o * hw..(o + 1) * hw];
                    if mode == PoolMode::GlobalMax {
                        let mut best = 0;
                        for (i, v) in plane.iter().enumerate() {
                            if *v > plane[best] {
                                best = i;
                            }
                        }
                        argmax.push(o * hw + best);
                        out.push(plane[best]);
                    } else {
                        out.push(plane.iter().sum::<f64>() / hw as f64);
                    }
                }
                (vec![b, c], out)
            }
            PoolMode::ChannelMax | PoolMode::ChannelAvg => {
                let mut out = Vec::with_capacity(b * hw);
                for s in 0..b {
                    for p in 0..hw {
                        let at = |ch: usize| (s * c + ch) * hw + p;
                        if mode == PoolMode::ChannelMax {
                            let mut best = 0;
                            for ch in 1..c {
                                if d[at(ch)] > d[at(best)] {
                                    best = ch;
                                }
                            }
                            argmax.push(at(best));
                            out.push(d[at(best)]);
                        } else {
                            out.push((0..c).map(|ch| d[at(ch)]).sum::<f64>() / c as f64);
                        }
                    }
                }
                (vec![b, 1, h, w], out)
            }
        };
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Pool(PoolRecord { x, mode, argmax })))
    }
}
