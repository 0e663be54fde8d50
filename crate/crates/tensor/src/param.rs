use std::collections::HashMap;

use crate::{Elem, Gradients, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learned tensor.
#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    /// Rows pinned to their initial value; their gradient is always discarded.
    pub frozen_rows: Vec<usize>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl<T: Elem> Param<T> {
    /// Whether flat element `i` is trainable.
    pub fn is_trainable(&self, i: usize) -> bool {
        if self.frozen_rows.is_empty() {
            return true;
        }
        let row = i / self.value.cols();
        !self.frozen_rows.contains(&row)
    }
}

/// Ordered collection of parameters, addressable by id or name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Register a parameter. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            frozen_rows: Vec::new(),
            decay,
        });
        id
    }

    pub fn freeze_rows(&mut self, id: ParamId, rows: &[usize]) {
        self.params[id.0].frozen_rows.extend_from_slice(rows);
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Add the gradients of every parameter bound on `tape` into the
    /// parameters' gradient buffers. Frozen rows receive nothing.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) {
        for &(id, var) in tape.bindings() {
            let Some(g) = grads.get(var) else { continue };
            let param = &mut self.params[id.0];
            param.value.accumulate_grad(g);
            if !param.frozen_rows.is_empty() {
                let cols = param.value.cols();
                let frozen = param.frozen_rows.clone();
                let buf = param.value.grad_mut();
                for r in frozen {
                    buf[r * cols..(r + 1) * cols].fill(T::zero());
                }
            }
        }
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.value.grad())
            .flat_map(|g| g.iter())
            .map(|&x| x.widen() * x.widen())
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Elem>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen_rows: p.frozen_rows.clone(),
                    decay: p.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
