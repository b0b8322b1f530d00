//! Named parameters and buffers owned by a model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitRule {
    Zeros,
    /// Uniform in `±sqrt(6 / fan_in)`, fan-in taken from all axes but the first.
    KaimingUniform,
    /// Batch-norm scale: all ones.
    BnDefault,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub init: InitRule,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub tensor: Tensor,
}

/// Every parameter and buffer of a model, in registration order.
///
/// Initial values are derived from `(seed, name)`, so a parameter's starting
/// value does not depend on what else the model contains.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { seed, params: Vec::new(), buffers: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_unique(&self, name: &str) -> Result<()> {
        if self.params.iter().any(|p| p.name == name) || self.buffers.iter().any(|b| b.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: InitRule) -> Result<ParamId> {
        self.check_unique(name)?;
        let mut tensor = match init {
            InitRule::Zeros => Tensor::zeros(shape),
            InitRule::BnDefault => Tensor::full(shape, 1.0),
            InitRule::KaimingUniform => {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let bound = math::sqrt(6.0 / fan_in as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ math::fnv1a(name.as_bytes()));
                Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
            }
        };
        tensor.set_requires_grad(true);
        self.params.push(Parameter { name: name.into(), tensor, init });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn register_buffer(&mut self, name: &str, value: Tensor) -> Result<BufferId> {
        self.check_unique(name)?;
        self.buffers.push(Buffer { name: name.into(), tensor: value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// All parameters then all buffers, flattened in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| &p.tensor)
            .chain(self.buffers.iter().map(|b| &b.tensor))
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.params.iter().map(|p| p.tensor.numel()).sum::<usize>()
            + self.buffers.iter().map(|b| b.tensor.numel()).sum::<usize>();
        if total != values.len() {
            return Err(Error::dim("load_flat", &[total], &[values.len()]));
        }
        let mut rest = values;
        let tensors =
            self.params.iter_mut().map(|p| &mut p.tensor).chain(self.buffers.iter_mut().map(|b| &mut b.tensor));
        for t in tensors {
            let (head, tail) = rest.split_at(t.numel());
            t.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}
