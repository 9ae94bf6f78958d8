use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tape, Tensor, Var};

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Shared,
    Detection,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Flat, ordered list of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Rebuild a store from saved parameters, in network order.
    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) {
        assert_eq!(tensors.len(), self.params.len());
        for (p, t) in self.params.iter_mut().zip(tensors) {
            assert_eq!(p.tensor.shape(), t.shape(), "shape change for {}", p.name);
            p.tensor = t;
        }
    }

    /// Put every parameter on the tape; `trainable` decides which record gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamGroup) -> bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.tensor.clone(), trainable(p.group))).collect()
    }

    pub(crate) fn push(&mut self, name: String, group: ParamGroup, tensor: Tensor) -> usize {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, group, tensor });
        self.params.len() - 1
    }
}

/// Allocates parameters with deterministic per-parameter random streams.
pub(crate) struct Builder {
    pub store: ParamStore,
    seed: u64,
    pub group: ParamGroup,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Self { store: ParamStore::default(), seed, group: ParamGroup::Shared }
    }

    /// Uniform(−b, b) with b = gain·√(6 / fan_in).
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize, gain: f64) -> usize {
        let mut rng = stream_rng(self.seed, Stream::Init, self.store.len() as u64);
        let bound = gain * libm::sqrt(6.0 / fan_in as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }).collect();
        self.store.push(name, self.group, Tensor::from_vec(shape, data))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.store.push(name, self.group, Tensor::full(shape, value))
    }
}
