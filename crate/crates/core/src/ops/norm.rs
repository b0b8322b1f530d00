//! Batch normalization over axis 1 of `[B, C, ...]` inputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct BnRecord {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// Per-channel statistics measured on a training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for the running estimate.
    pub var: Vec<f64>,
}

/// Where the normalization statistics come from.
pub enum Normalize<'a> {
    Batch { eps: f64 },
    Running { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Rank { op: "batchnorm", expected: 2, shape: shape.to_vec() });
    }
    let inner: usize = shape[2..].iter().product();
    Ok((shape[0], shape[1], inner))
}

pub(crate) fn batchnorm_backward(tape: &Tape, rec: &BnRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let x = tape.value(rec.x);
    let gamma = tape.value(rec.gamma).data();
    let (b, c, inner) = layout(x.shape()).unwrap();
    let n = (b * inner) as f64;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * inner;
            for i in base..base + inner {
                sum_g[ch] += g[i];
                sum_gx[ch] += g[i] * rec.xhat[i];
            }
        }
    }
    {
        let gx = slot(grads, rec.x, x.numel());
        for s in 0..b {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                let k = gamma[ch] * rec.inv_std[ch];
                for i in base..base + inner {
                    gx[i] += if rec.batch_stats {
                        k * (g[i] - sum_g[ch] / n - rec.xhat[i] * sum_gx[ch] / n)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
    }
    for (a, v) in slot(grads, rec.gamma, c).iter_mut().zip(&sum_gx) {
        *a += v;
    }
    for (a, v) in slot(grads, rec.beta, c).iter_mut().zip(&sum_g) {
        *a += v;
    }
}

impl Tape {
    /// Normalizes `x` per channel and applies the affine `gamma`, `beta` (both `[C]`).
    ///
    /// With [`Normalize::Batch`] the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        how: Normalize<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let t = self.value(x);
        let (b, c, inner) = layout(t.shape())?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::dim("batchnorm", t.shape(), self.shape(p)));
            }
        }
        let d = t.data();
        let count = b * inner;
        let (mean, var, eps, stats) = match how {
            Normalize::Batch { eps } => {
                if b < 2 {
                    return Err(Error::BatchSize { op: "batchnorm", batch: b });
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for s in 0..b {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        mean[ch] += d[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for s in 0..b {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        var[ch] += d[base..base + inner].iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
                    }
                }
                let unbiased = var.iter().map(|v| v / (count - 1) as f64).collect();
                var.iter_mut().for_each(|v| *v /= count as f64);
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, eps, Some(stats))
            }
            Normalize::Running { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("batchnorm", t.shape(), &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), eps, None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + eps)).collect();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; t.numel()];
        let mut out = vec![0.0; t.numel()];
        for s in 0..b {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (d[i] - mean[ch]) * inv_std[ch];
                    out[i] = gm[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let v = Tensor::new(t.shape(), out)?;
        let rec = BnRecord { x, gamma, beta, xhat, inv_std, batch_stats: stats.is_some() };
        Ok((self.push(v, Op::BatchNorm(rec)), stats))
    }
}
