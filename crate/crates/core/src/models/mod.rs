//! Autoencoders and classifier heads, with their train / encode / classify
//! procedures.
//!
//! Three autoencoders compress a sensor sample of `N^f` features into a
//! representation of `d` features:
//!
//! * `FC`: dense(N^f→d) + tanh, decoded by dense(d→N^f).
//! * `CNN`: conv1d(1→8, k3) + batch norm + ReLU, flattened into
//!   dense(8·N^f→d); decoded by dense(d→8·N^f) and a transposed conv1d(8→1, k3).
//! * `LSTM`: one encoder cell (hidden d) run over a window; one decoder cell
//!   (hidden N^f) fed the final representation at every step, reconstructing
//!   the window in reverse order.
//!
//! Classifiers are either a softmax head (dense + softmax per step) or an
//! LSTM head (cell + dense + softmax per step).

mod autoencoder;
mod bagging;
mod classifier;

pub use autoencoder::{AeVariant, Autoencoder, AutoencoderSpec, CNN_CHANNELS};
pub use bagging::{BaggingPolicy, BatchPlan};
pub use classifier::{argmax, Classifier, ClassifierHead, ClassifierSpec};

use thiserror::Error;

use crate::nn::{Adam, AdamState, Gradients, NnError, Tape, Var};
use crate::params::{ModelParams, ParamKind};
use crate::nn::LstmVars;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("feature dimension mismatch: model expects {expected}, input has {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("row {row}: label {label} outside [0, {classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("training data is empty")]
    EmptyData,
    #[error("parameter layout does not match the model specification: {0}")]
    Layout(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Learning rate, epoch count and bagging policy of one training call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub policy: BaggingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Trained,
    /// Nothing to train on; the model is returned unchanged.
    SkippedEmpty,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f32>,
    pub status: TrainStatus,
}

/// Trainable tensors of a [`ModelParams`] recorded as tape leaves.
pub(crate) struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub(crate) fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params
            .entries()
            .iter()
            .map(|e| match e.kind {
                ParamKind::Trainable => Some(tape.param(e.tensor.clone())),
                ParamKind::Buffer => None,
            })
            .collect();
        Self { vars }
    }

    pub(crate) fn var(&self, params: &ModelParams, name: &str) -> Var {
        let i = params
            .index_of(name)
            .unwrap_or_else(|| panic!("model layout has no tensor `{name}`"));
        self.vars[i].unwrap_or_else(|| panic!("`{name}` is not trainable"))
    }

    pub(crate) fn lstm(&self, params: &ModelParams, prefix: &str) -> LstmVars {
        use crate::nn::GATES;
        LstmVars {
            w_ih: GATES.map(|g| self.var(params, &format!("{prefix}.w_ih.{g}"))),
            w_hh: GATES.map(|g| self.var(params, &format!("{prefix}.w_hh.{g}"))),
            bias: GATES.map(|g| self.var(params, &format!("{prefix}.b.{g}"))),
        }
    }

    /// One Adam update of every trainable tensor from `grads`.
    pub(crate) fn apply(
        &self,
        params: &mut ModelParams,
        grads: &Gradients<f32>,
        adam: &Adam,
        state: &mut AdamState,
    ) -> Result<(), NnError> {
        let mut gs = Vec::new();
        let mut ps = Vec::new();
        for (e, v) in params.entries_mut().iter_mut().zip(&self.vars) {
            if let Some(v) = v {
                gs.push(grads.wrt(*v, &e.tensor));
                ps.push(&mut e.tensor);
            }
        }
        adam.step(&mut ps, &gs, state)
    }
}
