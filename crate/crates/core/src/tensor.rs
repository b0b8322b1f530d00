//! Dense row-major `f64` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64` in row-major order.
///
/// `grad` is only populated on parameter tensors, where the optimizer reads it.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || numel_of(shape) != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new(shape, vec![value; numel_of(shape)]).expect("extents must be positive")
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel_of(shape)).map(&mut f).collect();
        Self::new(shape, data).expect("extents must be positive")
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on && self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient accumulator, creating it if necessary.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        let acc = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Returns `(B, C, H, W)` for a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        dims4(&self.shape, op)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Tensor::new(shape, self.data.clone())
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, d) in index.iter().zip(&self.shape) {
            off = off * d + i;
        }
        self.data[off]
    }

    /// Mirrors the last axis (left-right flip for image-like tensors).
    pub fn flip_last(&self) -> Tensor {
        let w = *self.shape.last().unwrap();
        let mut out = self.data.clone();
        for row in out.chunks_mut(w) {
            row.reverse();
        }
        Tensor::new(&self.shape, out).unwrap()
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(&shape, data)
    }

    /// Row `i` of the leading axis as an owned tensor.
    pub fn select(&self, i: usize) -> Tensor {
        let inner = &self.shape[1..];
        let n = numel_of(inner);
        let shape = if inner.is_empty() { vec![1] } else { inner.to_vec() };
        Tensor::new(&shape, self.data[i * n..(i + 1) * n].to_vec()).unwrap()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dims4(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::Rank { op, expected: 4, shape: shape.to_vec() }),
    }
}
