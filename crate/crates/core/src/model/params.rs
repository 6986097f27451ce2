use crate::error::{CobraError, Result};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub frozen: bool,
}

/// Flat, ordered owner of every model parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            frozen: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::narrow(rng.normal() * std)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape and data agree");
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, S::one()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.entries
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in self
            .entries
            .iter_mut()
            .filter(|e| e.name.starts_with(prefix))
        {
            e.frozen = frozen;
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Replaces the values of `id`, keeping its shape.
    pub fn assign(&mut self, id: ParamId, data: Vec<S>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if data.len() != entry.tensor.numel() {
            return Err(CobraError::dim(
                "assign",
                format!(
                    "{} expects {} values, got {}",
                    entry.name,
                    entry.tensor.numel(),
                    data.len()
                ),
            ));
        }
        entry.tensor.data_mut().copy_from_slice(&data);
        Ok(())
    }
}

/// A forward pass in progress: a tape plus lazily bound parameters.
///
/// Parameters are copied onto the tape on first use. Frozen parameters (and
/// all parameters when gradients are disabled) become constant leaves, so no
/// gradient can reach them.
pub struct Graph<'a, S> {
    pub tape: Tape<S>,
    store: &'a ParamStore<S>,
    bound: Vec<Option<Var>>,
    track_grads: bool,
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new(store: &'a ParamStore<S>, track_grads: bool) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            track_grads,
        }
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let trainable = self.track_grads && !entry.frozen;
        let v = self
            .tape
            .leaf(entry.tensor.clone().with_requires_grad(trainable));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        self.tape.value(v)
    }

    /// Parameters bound on this graph that receive gradients.
    pub fn trainable_bindings(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .filter(|(_, v)| self.tape.needs_grad(*v))
            .collect()
    }
}
