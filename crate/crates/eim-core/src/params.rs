//! Named trainable parameters and their gradient accumulators.

use std::collections::HashMap;

use crate::error::GradError;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`]. Stable for the lifetime of
/// the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Flat collection of named parameter tensors with one gradient accumulator
/// per parameter. Insertion order is preserved; names are unique.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Panics if the name is already taken.
    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            grad: Tensor::zeros_like(&value),
            value,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.entries[id.0].value.shape(),
            value.shape(),
            "set_value shape mismatch for {:?}",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Accumulate a detached gradient buffer into the store. Callers are
    /// responsible for serializing concurrent accumulation.
    pub fn accumulate(&mut self, grads: &Gradients) {
        assert_eq!(grads.buffers.len(), self.entries.len(), "gradient buffer count mismatch");
        for (entry, g) in self.entries.iter_mut().zip(grads.buffers.iter()) {
            entry.grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in &mut self.entries {
            entry.grad.fill(0.0);
        }
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.squared_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Error if any accumulated gradient is non-finite, naming the parameter.
    pub fn check_grads_finite(&self) -> Result<(), GradError> {
        for entry in &self.entries {
            if !entry.grad.all_finite() {
                return Err(GradError::NonFiniteGradient { param: entry.name.clone() });
            }
        }
        Ok(())
    }

    /// Snapshot of all parameter values, in registration order.
    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn load_values(&mut self, values: &[Tensor]) {
        assert_eq!(values.len(), self.entries.len(), "value snapshot length mismatch");
        for (entry, v) in self.entries.iter_mut().zip(values) {
            assert_eq!(entry.value.shape(), v.shape(), "snapshot shape mismatch for {}", entry.name);
            entry.value = v.clone();
        }
    }
}

/// Detached per-parameter gradient buffers produced by one backward pass.
/// Buffers are aligned with the store's registration order so that
/// reductions over many of them are order-deterministic.
pub struct Gradients {
    buffers: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_for(store: &ParamStore) -> Self {
        Gradients {
            buffers: store.entries.iter().map(|e| Tensor::zeros_like(&e.value)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.buffers[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.buffers[id.0]
    }

    /// Elementwise sum with another buffer set. Used to reduce per-batch-element
    /// gradients in a fixed order.
    pub fn add(&mut self, other: &Gradients) {
        assert_eq!(self.buffers.len(), other.buffers.len());
        for (a, b) in self.buffers.iter_mut().zip(other.buffers.iter()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in &mut self.buffers {
            for v in b.data_mut() {
                *v *= c;
            }
        }
    }

    /// Global L2 norm across all buffers.
    pub fn norm(&self) -> f64 {
        self.buffers.iter().map(|b| b.squared_norm()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.buffers.iter().all(|b| b.all_finite())
    }
}
