use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::float::Float;
use crate::tensor::Tensor;

static NEXT_SET: AtomicU64 = AtomicU64::new(1);

/// Handle of one trainable array inside a [`Params`] set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named, ordered set of trainable arrays with gradient accumulators.
#[derive(Debug)]
pub struct Params<T> {
    set: u64,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Float> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Clone for Params<T> {
    fn clone(&self) -> Self {
        Self {
            set: NEXT_SET.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl<T: Float> Params<T> {
    pub fn new() -> Self {
        Self {
            set: NEXT_SET.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub(crate) fn set_id(&self) -> u64 {
        self.set
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Add every gradient in `grads` that belongs to this set.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for ((set, idx), g) in &grads.by_param {
            if *set == self.set {
                self.grads[*idx].add_assign(g);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }
}

/// Parameter gradients produced by [`crate::Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    pub(crate) by_param: HashMap<(u64, usize), Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, params: &Params<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&(params.set_id(), id.0))
    }
}
