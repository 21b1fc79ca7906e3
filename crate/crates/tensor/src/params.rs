use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Text encoder: embeddings and self-attention stack.
    Encoder,
    /// Task head on top of the encoder.
    Head,
    /// Parameters that only exist for the masked-LM objective.
    Pretraining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
}

/// Named, grouped parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics if `name` is already taken.
    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient accumulator, one optional slot per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn new(num_params: usize) -> Self {
        Self { slots: vec![None; num_params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        if id.0 >= self.slots.len() {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(g) => *g += grad,
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Adds `rows` of `grad` into the given rows of a table-shaped gradient.
    pub fn scatter_rows(&mut self, id: ParamId, shape: (usize, usize), rows: &[usize], grad: &Matrix) {
        if id.0 >= self.slots.len() {
            self.slots.resize(id.0 + 1, None);
        }
        let slot = self.slots[id.0].get_or_insert_with(|| Matrix::zeros(shape));
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = slot.row_mut(r);
            dst += &grad.row(k);
        }
    }

    /// Adds every slot of `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn l2_norm(&self, id: ParamId) -> f64 {
        self.get(id).map_or(0.0, |g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}
