use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;
use crate::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), AutodiffError> {
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_param",
                left: current.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }
}

/// Parameters of a store bound to one tape; each parameter becomes a leaf the
/// first time it is used.
pub struct Bound<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'t, 's> Bound<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    /// Binds parameter `i` to `vars[i]` instead of fresh leaves, so callers
    /// can treat parameters as ordinary inputs (gradient checking does).
    pub fn from_vars(tape: &'t Tape, store: &'s ParamStore, vars: &[Var<'t>]) -> Result<Self, AutodiffError> {
        if vars.len() != store.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bind_params",
                left: vec![store.len()],
                right: vec![vars.len()],
            });
        }
        for (id, v) in store.ids().zip(vars) {
            if v.shape() != store.get(id).shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "bind_params",
                    left: store.get(id).shape().to_vec(),
                    right: v.shape(),
                });
            }
        }
        Ok(Self {
            tape,
            store,
            vars: RefCell::new(vars.iter().copied().map(Some).collect()),
        })
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| self.tape.leaf_shared(self.store.shared(id), true))
    }

    /// Moves the parameter gradients out of `grads`.
    pub fn collect(&self, grads: &mut Gradients) -> GradBuffer {
        let vars = self.vars.borrow();
        let mut out = GradBuffer::zeros_like(self.store);
        for (slot, var) in out.grads.iter_mut().zip(vars.iter()) {
            if let Some(v) = var {
                if let Some(g) = grads.take(v.id()) {
                    *slot = g;
                }
            }
        }
        out
    }
}

/// One gradient buffer per parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Vec<f32>>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.grads.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn global_norm(&self) -> f32 {
        self.grads
            .iter()
            .flatten()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f32) -> f32 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|x| x.is_finite())
    }
}
