//! Named parameter tensors and their gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::{Grads, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Flat key→tensor map. Keys are slash-separated layer paths such as
/// `agent0/gru1/w_z`. Non-trainable entries hold buffers (batch-norm
/// running statistics) and never receive gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        value.ensure_finite(name)?;
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    pub fn num_trainable_values(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Overwrites every value with the one in `other`; both stores must have
    /// been built by the same constructor.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::invalid("parameter stores differ in size"));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter {} does not match {}",
                    mine.name, theirs.name
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    pub fn zero_all(&mut self) {
        for e in &mut self.entries {
            e.value = Tensor::zeros(e.value.shape());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// One gradient tensor per parameter, shape-matched to the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    slots: Vec<Tensor>,
}

impl Gradient {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradient {
            slots: store
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// `∇θ += ∂loss/∂θ` for every parameter bound on `tape`.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads) -> Result<()> {
        for (id, var) in tape.bound_params() {
            if let Some(g) = grads.get(var) {
                self.slots[id.0].add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn add(&mut self, other: &Gradient) -> Result<()> {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for s in &mut self.slots {
            s.scale_in_place(k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().all(Tensor::is_finite)
    }

    pub fn max_abs_diff(&self, other: &Gradient) -> f64 {
        self.slots
            .iter()
            .zip(&other.slots)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}
