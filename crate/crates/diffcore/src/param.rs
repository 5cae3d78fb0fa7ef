use std::collections::HashMap;

use crate::error::{dim_err, DiffError, Result};
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A learnable tensor with its Adam state.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Option<Tensor>,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

/// Non-learnable state such as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Buffer {
    pub name: String,
    pub tensor: Tensor,
}

/// Owns every parameter and buffer of a model, addressed by unique name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
    names: HashMap<String, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(DiffError::DuplicateName(name));
        }
        let id = self.params.len();
        self.names.insert(name.clone(), Slot::Param(id));
        let zeros = Tensor::zeros(tensor.shape().to_vec());
        self.params.push(Parameter {
            name,
            adam_m: zeros.clone(),
            adam_v: zeros,
            tensor,
            grad: None,
            step_count: 0,
        });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<BufferId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(DiffError::DuplicateName(name));
        }
        let id = self.buffers.len();
        self.names.insert(name.clone(), Slot::Buffer(id));
        self.buffers.push(Buffer { name, tensor });
        Ok(BufferId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
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

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        match self.names.get(name) {
            Some(Slot::Param(i)) => Some(ParamId(*i)),
            _ => None,
        }
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        match self.names.get(name) {
            Some(Slot::Buffer(i)) => Some(BufferId(*i)),
            _ => None,
        }
    }

    /// Stores `grads` as each parameter's gradient, scaled by `scale`.
    /// Parameters absent from `grads` end up with no gradient.
    pub fn set_grads(&mut self, grads: &Gradients, scale: Real) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            p.grad = g.as_ref().map(|g| {
                let mut g = g.clone();
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                g
            });
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Replaces the value of a named tensor, keeping its shape.
    pub fn assign(&mut self, name: &str, values: &[Real]) -> Result<()> {
        let t = match self.names.get(name) {
            Some(Slot::Param(i)) => &mut self.params[*i].tensor,
            Some(Slot::Buffer(i)) => &mut self.buffers[*i].tensor,
            None => return Err(DiffError::UnknownName(name.to_string())),
        };
        if t.numel() != values.len() {
            return dim_err("assign", format!("`{name}` expects {} values", t.numel()));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass, indexed by
/// [`ParamId`]. Entries are `None` for parameters the loss never touched.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(store: &ParamStore) -> Self {
        Self {
            per_param: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.per_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// Element-wise sum, in call order.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.per_param.len() < other.per_param.len() {
            self.per_param.resize(other.per_param.len(), None);
        }
        for (mine, theirs) in self.per_param.iter_mut().zip(&other.per_param) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }
}
