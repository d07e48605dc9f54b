use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }
}

/// Trainable parameters receive gradients; buffers (batch-norm running
/// statistics) are only updated by train-mode forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: Tensor,
}

/// Ordered named tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    entries: Vec<StoreEntry>,
    frozen: bool,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, kind: TensorKind, tensor: Tensor) -> usize {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate tensor {name}");
        self.entries.push(StoreEntry { name, kind, tensor });
        self.entries.len() - 1
    }

    /// Builds a store from already-materialized entries (checkpoint loading).
    pub fn from_entries(entries: Vec<StoreEntry>, frozen: bool) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::InvariantViolation(format!("duplicate tensor {:?}", e.name)));
            }
            if e.tensor.shape.iter().product::<usize>() != e.tensor.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {:?}: shape {:?} does not hold {} values",
                    e.name,
                    e.tensor.shape,
                    e.tensor.data.len()
                )));
            }
        }
        Ok(Self { entries, frozen })
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    pub(crate) fn data(&self, idx: usize) -> &[f64] {
        &self.entries[idx].tensor.data
    }

    /// Mutable access to one tensor; refused on a frozen store.
    pub(crate) fn data_mut(&mut self, idx: usize) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(Error::FrozenStore);
        }
        Ok(&mut self.entries[idx].tensor.data)
    }

    /// Mutable access by name; refused on a frozen store.
    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        if self.frozen {
            return Err(Error::FrozenStore);
        }
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("tensor {name:?} missing")))?;
        Ok(&mut self.entries[idx].tensor)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the store immutable. Gradients can still flow through a network
    /// evaluated on it, but optimizers and running-stat updates refuse it.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == TensorKind::Param)
            .map(|e| e.tensor.data.len())
            .sum()
    }

    /// Checks that `other` has exactly this store's tensor names, kinds and
    /// shapes, in order.
    pub fn check_compatible(&self, other: &ParameterStore) -> Result<()> {
        for e in &self.entries {
            match other.entries.iter().find(|o| o.name == e.name) {
                None => return Err(Error::ShapeMismatch(format!("tensor {:?} missing", e.name))),
                Some(o) if o.tensor.shape != e.tensor.shape || o.kind != e.kind => {
                    return Err(Error::ShapeMismatch(format!(
                        "tensor {:?}: expected {:?} {:?}, found {:?} {:?}",
                        e.name, e.kind, e.tensor.shape, o.kind, o.tensor.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.entries.iter().find(|o| self.index_of(&o.name).is_none()) {
            return Err(Error::ShapeMismatch(format!("unexpected tensor {:?}", extra.name)));
        }
        if other.entries.iter().map(|e| &e.name).ne(self.entries.iter().map(|e| &e.name)) {
            return Err(Error::ShapeMismatch("tensor order differs".into()));
        }
        Ok(())
    }

    /// Every value rounded through `f32`, as it would be after a checkpoint
    /// round trip.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            for v in &mut e.tensor.data {
                *v = *v as f32 as f64;
            }
        }
        out
    }
}

/// Per-tensor gradients aligned with a [`ParameterStore`]; buffers carry an
/// empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            values: store
                .entries()
                .iter()
                .map(|e| match e.kind {
                    TensorKind::Param => vec![0.0; e.tensor.data.len()],
                    TensorKind::Buffer => Vec::new(),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.values.iter_mut().flatten() {
            *v *= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_blocks_mutation_and_is_idempotent() {
        let mut s = ParameterStore::new();
        s.push("w", TensorKind::Param, Tensor::filled(vec![2], 1.0));
        assert!(s.data_mut(0).is_ok());
        let f = s.freeze();
        assert!(f.is_frozen());
        let mut f2 = f.clone().freeze();
        assert_eq!(f, f2);
        assert!(matches!(f2.data_mut(0), Err(Error::FrozenStore)));
    }

    #[test]
    fn compatibility_names_offending_tensor() {
        let mut a = ParameterStore::new();
        a.push("conv.w", TensorKind::Param, Tensor::filled(vec![2, 3], 0.0));
        let mut b = ParameterStore::new();
        b.push("conv.w", TensorKind::Param, Tensor::filled(vec![3, 3], 0.0));
        let msg = a.check_compatible(&b).unwrap_err().to_string();
        assert!(msg.contains("conv.w"));
        assert!(a.check_compatible(&a.clone()).is_ok());
    }
}
