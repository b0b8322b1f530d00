use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::Tensor;

/// Max-shifted softmax of each row of length `width`, written into `out`.
pub(crate) fn softmax_rows(data: &[f64], width: usize, out: &mut [f64]) {
    for (row, dst) in data.chunks(width).zip(out.chunks_mut(width)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = math::exp(v - max);
            total += *d;
        }
        let inv = 1.0 / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
}

pub(crate) fn softmax_backward(y: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>], vx: Var) {
    let width = *y.shape().last().unwrap();
    let acc = slot(grads, vx, y.numel());
    for ((yr, gr), ar) in y.data().chunks(width).zip(g.chunks(width)).zip(acc.chunks_mut(width)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((a, yi), gi) in ar.iter_mut().zip(yr).zip(gr) {
            *a += yi * (gi - dot);
        }
    }
}

impl Tape {
    /// Softmax over the last axis (each "row").
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let width = *t.shape().last().unwrap();
        let mut out = alloc::vec![0.0; t.numel()];
        softmax_rows(t.data(), width, &mut out);
        let v = Tensor::new(t.shape(), out)?;
        Ok(self.push(v, Op::Softmax(x)))
    }
}
