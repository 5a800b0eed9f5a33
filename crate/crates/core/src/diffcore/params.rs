use super::tensor::{Real, Tensor};
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Debug)]
struct Entry<R> {
    name: String,
    value: Tensor<R>,
    trainable: bool,
}

/// Named parameter tensors owned outside any tape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    entries: Vec<Entry<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> ParamId {
        self.entries.push(Entry { name: name.into(), value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Frozen parameters still take part in forward passes but never receive gradients.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
        }
    }

    /// Named tensors for serialization.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Overwrites values by name; every parameter must be present with the same shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<R>)]) -> Result<(), DiffError> {
        for e in &mut self.entries {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == e.name)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing tensor '{}'", e.name)))?;
            if t.shape() != e.value.shape() {
                return Err(DiffError::Checkpoint(format!(
                    "tensor '{}' has shape {:?}, expected {:?}",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )));
            }
            e.value = t.clone();
        }
        Ok(())
    }

    /// First parameter holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries.iter().find(|e| e.value.has_non_finite()).map(|e| e.name.as_str())
    }
}
