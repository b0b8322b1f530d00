//! Reverse-mode tape.
//!
//! Every primitive applied through a [`Tape`] appends one node holding its
//! output value and the information its backward rule needs. [`Tape::backward`]
//! walks the nodes in reverse and accumulates one contribution per use of each
//! input.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{conv, elementwise, loss, norm, pool, shape, softmax};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Softmax(Var),
    Conv2d(conv::ConvRecord),
    Pool(pool::PoolRecord),
    BatchNorm(norm::BnRecord),
    SoftmaxXent(loss::XentRecord),
    Triplet(loss::TripletRecord),
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant or an input as a leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.value(loss);
        if root.numel() != 1 {
            return Err(Error::Contract(alloc::format!("backward needs a scalar loss, got shape {:?}", root.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => elementwise::add_backward(self.value(*a), self.value(*b), out, g, 1.0, grads, *a, *b),
            Op::Sub(a, b) => elementwise::add_backward(self.value(*a), self.value(*b), out, g, -1.0, grads, *a, *b),
            Op::Mul(a, b) => elementwise::mul_backward(self.value(*a), self.value(*b), out, g, grads, *a, *b),
            Op::Scale(x, s) => {
                let acc = slot(grads, *x, g.len());
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += s * gi;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let acc = slot(grads, *x, g.len());
                for ((a, gi), xi) in acc.iter_mut().zip(g).zip(xv) {
                    if *xi > 0.0 {
                        *a += gi;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                slot(grads, *x, n).iter_mut().for_each(|a| *a += g[0]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                slot(grads, *x, n).iter_mut().for_each(|a| *a += g[0] / n as f64);
            }
            Op::MatMul(a, b) => shape::matmul_backward(self.value(*a), self.value(*b), g, grads, *a, *b),
            Op::Reshape(x) => {
                let acc = slot(grads, *x, g.len());
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += gi;
                }
            }
            Op::Permute(x, axes) => shape::permute_backward(self.value(*x), axes, g, grads, *x),
            Op::Concat(xs, axis) => {
                let shapes: Vec<&[usize]> = xs.iter().map(|v| self.shape(*v)).collect();
                shape::concat_backward(&shapes, *axis, g, grads, xs)
            }
            Op::Softmax(x) => softmax::softmax_backward(out, g, grads, *x),
            Op::Conv2d(rec) => conv::conv2d_backward(self, rec, g, grads),
            Op::Pool(rec) => pool::pool_backward(self, rec, g, grads),
            Op::BatchNorm(rec) => norm::batchnorm_backward(self, rec, g, grads),
            Op::SoftmaxXent(rec) => loss::xent_backward(rec, g, grads),
            Op::Triplet(rec) => loss::triplet_backward(self, rec, g, grads),
        }
    }
}

/// Gradient slot for `v` with a known length, zero-filled on first use.
pub(crate) fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Whether layers run with batch statistics (and record running-stat updates) or not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass context: the tape plus the parameter bindings for one pass.
///
/// Each parameter is placed on the tape at most once per pass, so its gradient
/// is the sum over all of its uses.
pub struct Ctx<'a> {
    pub tape: Tape,
    mode: Mode,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    updates: Vec<(BufferId, Vec<f64>)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self { tape: Tape::new(), mode, store, bound: vec![None; store.len()], updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.leaf(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).tensor.clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: BufferId) -> &'a Tensor {
        &self.store.buffer(id).tensor
    }

    pub(crate) fn record_update(&mut self, id: BufferId, value: Vec<f64>) {
        self.updates.push((id, value));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn finish(self) -> Recorded {
        Recorded { tape: self.tape, bound: self.bound, updates: self.updates }
    }
}

/// A finished forward pass, detached from the store so gradients can be written back.
pub struct Recorded {
    pub tape: Tape,
    bound: Vec<Option<Var>>,
    updates: Vec<(BufferId, Vec<f64>)>,
}

impl Recorded {
    /// Back-propagates `loss` and adds the parameter gradients into `store`.
    /// Parameters the loss does not reach keep their gradient unchanged.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.tape.backward(loss)?;
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(g) = v.and_then(|v| grads.get(v)) {
                store.get_mut(ParamId(i)).tensor.accumulate_grad(g);
            }
        }
        Ok(grads)
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    /// Commits running-statistic updates made in train mode.
    pub fn apply_updates(&self, store: &mut ParamStore) {
        for (id, value) in &self.updates {
            store.buffer_mut(*id).tensor.data_mut().copy_from_slice(value);
        }
    }
}
