//! Minimal reverse-mode differentiable engine: layers, losses, tape and Adam.

mod adam;
pub mod init;
mod lstm;
pub mod ops;
mod tape;

pub use adam::{Adam, AdamState};
pub use lstm::{lstm_step, LstmCellParams, LstmState, GATES};
pub use ops::{
    batchnorm1d_forward, conv1d_forward, conv1d_transpose_forward, cross_entropy_loss,
    dense_forward, mse_loss, relu, softmax, BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM,
    PROB_FLOOR,
};
pub use tape::{Gradients, LstmVars, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("degenerate batch in {op}: need at least 2 values per channel, got {count}")]
    DegenerateBatch { op: &'static str, count: usize },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("non-finite gradient in parameter #{param} (element {element})")]
    NonFinite { param: usize, element: usize },
}
