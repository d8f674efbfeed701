//! Deterministic simulator of semi-supervised federated learning for
//! activity recognition on multichannel sensor time series.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod eval;
pub mod federation;
pub mod models;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;

pub use tensor::{Scalar, Tensor};
