//! Named parameter tensors with accumulated gradients and JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
}

/// An ordered collection of named parameter tensors. Iteration is always in
/// name order, which keeps graph construction and checkpoints deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

/// Maps parameter names to the leaf nodes of one particular graph.
#[derive(Debug)]
pub struct ParamBinding {
    ids: BTreeMap<String, NodeId>,
}

impl ParamBinding {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros_like(&value);
        self.entries.insert(name.to_string(), ParamEntry { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn grad_of(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters matching a name predicate.
    pub fn scalar_count_where(&self, mut keep: impl FnMut(&str) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| keep(n))
            .map(|(_, e)| e.value.numel())
            .sum()
    }

    pub fn scalar_count(&self) -> usize {
        self.scalar_count_where(|_| true)
    }

    /// Create a `requires_grad` leaf for every parameter, in name order.
    pub fn bind(&self, g: &mut Graph) -> ParamBinding {
        let mut ids = BTreeMap::new();
        for (name, entry) in &self.entries {
            ids.insert(name.clone(), g.leaf(entry.value.clone()));
        }
        ParamBinding { ids }
    }

    /// Add the gradients a finished backward left on the bound leaves.
    pub fn accumulate_grads(&mut self, g: &Graph, binding: &ParamBinding) {
        for (name, id) in &binding.ids {
            if let Some(grad) = g.grad(*id) {
                let entry = self.entries.get_mut(name).expect("binding matches set");
                entry.grad.axpy(1.0, grad);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in self.entries.values_mut() {
            e.grad.scale_in_place(factor);
        }
    }

    pub fn grads_all_finite(&self) -> bool {
        self.entries.values().all(|e| e.grad.all_finite())
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|e| e.grad.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Plain gradient step over every parameter.
    pub fn sgd_step(&mut self, lr: f64) {
        for e in self.entries.values_mut() {
            let g = e.grad.clone();
            e.value.axpy(-lr, &g);
        }
    }

    /// Plain gradient step restricted to parameters whose name passes the
    /// filter; everything else is untouched bit for bit.
    pub fn sgd_step_where(&mut self, lr: f64, mut keep: impl FnMut(&str) -> bool) {
        for (name, e) in self.entries.iter_mut() {
            if keep(name) {
                let g = e.grad.clone();
                e.value.axpy(-lr, &g);
            }
        }
    }

    /// Arbitrary per-parameter step direction (used by momentum training).
    pub fn apply_step(&mut self, name: &str, lr: f64, direction: &Tensor) {
        if let Some(e) = self.entries.get_mut(name) {
            e.value.axpy(-lr, direction);
        }
    }

    // ── checkpoints ─────────────────────────────────────────────────────

    /// Flat `{tensor_name -> {shape, data}}` JSON; byte-stable for
    /// identical values because keys are sorted and floats use the shortest
    /// round-trip representation.
    pub fn to_json_string(&self) -> String {
        let map: BTreeMap<&String, &Tensor> =
            self.entries.iter().map(|(n, e)| (n, &e.value)).collect();
        serde_json::to_string_pretty(&map).expect("tensor serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let map: BTreeMap<String, Tensor> = serde_json::from_str(s)?;
        let mut set = ParamSet::new();
        for (name, value) in map {
            set.insert(&name, value)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }
}
