use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Graph, Tensor, Var};

/// Index of a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors. Registration order is the
/// serialization order and never changes for a given architecture.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    trainable: Vec<bool>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            trainable: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(true);
        ParamId(self.values.len() - 1)
    }

    /// Registers a tensor with i.i.d. `N(0, std²)` entries drawn from a stream
    /// seeded by `seed` and the registration index.
    pub fn register_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, seed: u64) -> ParamId {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(self.values.len() as u64 + 1)));
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape.to_vec(), |_| S::lit(normal.sample(&mut rng)));
        self.register(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Frozen tensors enter the graph as constants and are skipped by the optimizer.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Inserts every tensor into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<S>) -> Bound {
        let vars = self
            .values
            .iter()
            .zip(&self.trainable)
            .map(|(t, &tr)| g.leaf(t.clone(), tr))
            .collect();
        Bound { vars }
    }

    /// Gradients collected by a backward pass over `bound`, in registration order.
    pub fn grads(&self, g: &Graph<S>, bound: &Bound) -> Vec<Tensor<S>> {
        bound.vars.iter().map(|&v| g.grad_tensor(v)).collect()
    }

    /// Replaces values with tensors of identical shapes (checkpoint loading).
    pub fn assign(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::config(format!(
                "parameter {}: shape {:?} does not match {:?}",
                self.names[id.0],
                value.shape(),
                self.values[id.0].shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Graph handles for every parameter of a store, valid for one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Reuses existing graph leaves (e.g. those created by a gradient checker)
    /// in registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}
