//! Ordered, named parameter tensors of a model.

use crate::nn::{LstmCellParams, GATES};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried by the model but not differentiated (batch-norm running stats).
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Parameter tensors in construction order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            kind,
        });
    }

    pub fn trainable(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.push(name, tensor, ParamKind::Trainable);
    }

    pub fn buffer(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.push(name, tensor, ParamKind::Buffer);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    /// Looks up a tensor that the model layout guarantees to exist.
    pub(crate) fn expect(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("model layout has no tensor `{name}`"))
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Names and shapes must match pairwise, in order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn push_lstm(&mut self, prefix: &str, cell: LstmCellParams) {
        let LstmCellParams {
            w_ih, w_hh, bias, ..
        } = cell;
        for (g, t) in GATES.iter().zip(w_ih) {
            self.trainable(format!("{prefix}.w_ih.{g}"), t);
        }
        for (g, t) in GATES.iter().zip(w_hh) {
            self.trainable(format!("{prefix}.w_hh.{g}"), t);
        }
        for (g, t) in GATES.iter().zip(bias) {
            self.trainable(format!("{prefix}.b.{g}"), t);
        }
    }

    /// Rebuilds the typed view of an LSTM cell stored under `prefix`.
    pub fn lstm(&self, prefix: &str) -> Option<LstmCellParams> {
        let fetch = |kind: &str, g: &str| self.get(&format!("{prefix}.{kind}.{g}")).cloned();
        let w_ih = GATES.map(|g| fetch("w_ih", g));
        let w_hh = GATES.map(|g| fetch("w_hh", g));
        let bias = GATES.map(|g| fetch("b", g));
        if w_ih.iter().chain(&w_hh).chain(&bias).any(Option::is_none) {
            return None;
        }
        let w_ih = w_ih.map(Option::unwrap);
        let cell = LstmCellParams {
            input_dim: w_ih[0].dim(1),
            hidden_dim: w_ih[0].dim(0),
            w_ih,
            w_hh: w_hh.map(Option::unwrap),
            bias: bias.map(Option::unwrap),
        };
        cell.validate().ok()?;
        Some(cell)
    }
}
