use std::collections::HashMap;

use super::{scalar, Scalar, Tape, TensorId};

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered, name-indexed collection of parameter arrays. The order is the
/// insertion order and is what the checkpoint format and the optimizer
/// state align with.
#[derive(Debug, Clone, Default)]
pub struct Params<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter {name}: data length does not match shape"
        );
        assert!(
            !self.index.contains_key(&name),
            "parameter {name} already present"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, shape, data });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &ParamEntry<T> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"));
        &self.entries[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamEntry<T> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"));
        &mut self.entries[i]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Params<T> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: vec![T::zero(); e.data.len()],
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.data.iter().map(|&v| scalar::<U>(v.to_f64().unwrap())).collect(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Records every entry as a differentiable leaf on the tape.
    pub fn bind(&self, tape: &Tape<T>) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|e| tape.leaf(&e.shape, e.data.clone(), true))
            .collect();
        BoundParams {
            ids,
            index: self.index.clone(),
        }
    }

    /// Collects gradients off the tape after a backward pass, aligned
    /// with this store; entries the loss never touched get zeros.
    pub fn grads_from(&self, tape: &Tape<T>, bound: &BoundParams) -> Params<T> {
        let mut grads = self.zeros_like();
        for (entry, &id) in grads.entries.iter_mut().zip(&bound.ids) {
            if let Some(g) = tape.grad(id) {
                entry.data = g;
            }
        }
        grads
    }
}

/// Tape handles for a bound [`Params`] store.
pub struct BoundParams {
    ids: Vec<TensorId>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> TensorId {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no bound parameter named {name:?}"));
        self.ids[i]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}
