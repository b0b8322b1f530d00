//! Elementwise arithmetic with same-rank broadcasting, ReLU and reductions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{slot, Op, Tape, Var};
use crate::tensor::{numel_of, Tensor};

/// Output shape when every axis of `a` and `b` is equal or one of them is 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_pair(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    if a == out && b == out {
        for i in 0..numel_of(out) {
            f(i, i, i);
        }
        return;
    }
    let sa = strides_for(a, out);
    let sb = strides_for(b, out);
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel_of(out) / inner;
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    for _ in 0..outer {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank - 1 {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::dim(op, a.shape(), b.shape()))?;
    let mut out = vec![0.0; numel_of(&shape)];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(a.shape(), b.shape(), &shape, |o, i, j| out[o] = f(ad[i], bd[j]));
    Tensor::new(&shape, out)
}

pub(crate) fn add_backward(
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    g: &[f64],
    sign_b: f64,
    grads: &mut [Option<Vec<f64>>],
    va: Var,
    vb: Var,
) {
    {
        let ga = slot(grads, va, a.numel());
        for_each_pair(a.shape(), b.shape(), out.shape(), |o, i, _| ga[i] += g[o]);
    }
    let gb = slot(grads, vb, b.numel());
    for_each_pair(a.shape(), b.shape(), out.shape(), |o, _, j| gb[j] += sign_b * g[o]);
}

pub(crate) fn mul_backward(
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    va: Var,
    vb: Var,
) {
    let (ad, bd) = (a.data(), b.data());
    {
        let ga = slot(grads, va, a.numel());
        for_each_pair(a.shape(), b.shape(), out.shape(), |o, i, j| ga[i] += g[o] * bd[j]);
    }
    let gb = slot(grads, vb, b.numel());
    for_each_pair(a.shape(), b.shape(), out.shape(), |o, i, j| gb[j] += g[o] * ad[i]);
}

impl Tape {
    /// `a + b` with broadcasting over unit axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// `a * b` elementwise with broadcasting over unit axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape(), t.data().iter().map(|v| v * s).collect()).unwrap();
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape(), t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()).unwrap();
        self.push(v, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }
}
