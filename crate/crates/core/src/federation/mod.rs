//! Communication rounds of the four training schemes.
//!
//! * `SEMI`: clients train the autoencoder on unlabelled data, the server
//!   averages it, encodes its labelled set and trains the classifier.
//! * `SUPERVISED`: clients train the classifier on labelled data and the
//!   server averages it.
//! * `CS`: the server trains the classifier on its labelled set alone.
//! * `DA`: clients pseudo-label their data with the global classifier and
//!   train on it; the server averages and fine-tunes on its labelled set.

mod executor;
mod rounds;

pub use executor::{Executor, WORKERS_ENV};
pub use rounds::{
    init_state, prepare, pseudo_label, run_experiment, run_experiment_with, run_round,
    run_round_cs, run_round_da, run_round_semi, run_round_supervised, Clients, ExperimentRun,
    GlobalState, Setup,
};

use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{round_half_up, DataError};
use crate::eval::EvalError;
use crate::models::{AeVariant, BaggingPolicy, ClassifierHead, ModelError};
use crate::params::ModelParams;
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Semi,
    Supervised,
    Cs,
    Da,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Semi => "SEMI",
            Scheme::Supervised => "SUPERVISED",
            Scheme::Cs => "CS",
            Scheme::Da => "DA",
        }
    }

    /// Classifier head used when the configuration does not name one.
    pub fn default_head(self) -> ClassifierHead {
        match self {
            Scheme::Semi => ClassifierHead::Softmax,
            _ => ClassifierHead::Lstm,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartitionKind {
    #[serde(rename = "IID")]
    Iid,
    #[serde(rename = "NONIID")]
    NonIid,
}

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid {key}: {message}")]
    Config { key: &'static str, message: String },
    #[error("aggregation failed at client {client_id}: {message}")]
    Aggregation { client_id: usize, message: String },
    #[error("round {round}: no client produced an update")]
    NoUpdates { round: usize },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Hyperparameters of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// `K`.
    pub num_clients: usize,
    /// `C`, the fraction of clients selected per round.
    pub client_fraction: f64,
    /// `T`.
    pub rounds: usize,
    /// Client learning rate.
    pub lr_a: f64,
    /// Server learning rate.
    pub lr_s: f64,
    /// Client epochs per round.
    pub e_a: usize,
    /// Server epochs per round.
    pub e_s: usize,
    /// `r_l`, share of the training set labelled on the server.
    pub label_ratio: f64,
    /// `r_f`, representation size over feature count.
    pub compression_ratio: f64,
    pub scheme: Scheme,
    pub partition: PartitionKind,
    pub autoencoder: AeVariant,
    pub classifier: ClassifierHead,
    pub bagging: BaggingPolicy,
    /// Rounds between test evaluations.
    pub eval_every: usize,
    /// Test samples per accuracy window.
    pub window: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            client_fraction: 0.1,
            rounds: 50,
            lr_a: 0.01,
            lr_s: 0.001,
            e_a: 2,
            e_s: 5,
            label_ratio: 1.0 / 16.0,
            compression_ratio: 0.5,
            scheme: Scheme::Semi,
            partition: PartitionKind::Iid,
            autoencoder: AeVariant::Lstm,
            classifier: ClassifierHead::Softmax,
            bagging: BaggingPolicy::default(),
            eval_every: 2,
            window: crate::eval::DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

fn config_err(key: &'static str, message: impl Into<String>) -> FederationError {
    FederationError::Config {
        key,
        message: message.into(),
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.num_clients == 0 {
            return Err(config_err("num_clients", "must be at least 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(config_err(
                "client_fraction",
                format!("{} is outside (0, 1]", self.client_fraction),
            ));
        }
        if self.clients_per_round() == 0 {
            return Err(config_err(
                "client_fraction",
                format!(
                    "{} of {} clients rounds to zero",
                    self.client_fraction, self.num_clients
                ),
            ));
        }
        for (key, v) in [("lr_a", self.lr_a), ("lr_s", self.lr_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(key, format!("{v} must be a finite rate >= 0")));
            }
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return Err(config_err(
                "label_ratio",
                format!("{} is outside (0, 1]", self.label_ratio),
            ));
        }
        if !(self.compression_ratio > 0.0 && self.compression_ratio < 1.0) {
            return Err(config_err(
                "compression_ratio",
                format!("{} is outside (0, 1)", self.compression_ratio),
            ));
        }
        if self.eval_every == 0 {
            return Err(config_err("eval_every", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(config_err("window", "must be at least 1"));
        }
        self.bagging
            .validate()
            .map_err(|e| config_err("bagging", e.to_string()))?;
        if self.scheme == Scheme::Semi
            && self.autoencoder == AeVariant::Cnn
            && self.bagging.batch_min < 2
        {
            return Err(config_err(
                "bagging",
                "the CNN autoencoder needs batch_min >= 2 for batch statistics",
            ));
        }
        Ok(())
    }

    /// `round(K · C)`.
    pub fn clients_per_round(&self) -> usize {
        round_half_up(self.num_clients as f64 * self.client_fraction)
    }
}

/// `round(K · C)` distinct client ids drawn for round `round`, ascending.
pub fn select_clients(num_clients: usize, fraction: f64, round: usize, seed: u64) -> Vec<usize> {
    let n = round_half_up(num_clients as f64 * fraction).clamp(1, num_clients.max(1));
    if num_clients == 0 {
        return Vec::new();
    }
    let mut rng = stream(seed, Purpose::Selection, round as u64, 0);
    let mut ids = index::sample(&mut rng, num_clients, n).into_vec();
    ids.sort_unstable();
    ids
}

/// A client's locally trained model and its sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub n_k: usize,
}

/// Weighted mean of every tensor in 64-bit precision, weights `n_k / Σ n_k`,
/// summed in ascending client-id order.
pub fn fedavg_f64(updates: &[ClientUpdate]) -> Result<Vec<Tensor<f64>>, FederationError> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let Some(first) = sorted.first() else {
        return Err(FederationError::NoUpdates { round: 0 });
    };
    for u in &sorted {
        if u.n_k == 0 {
            return Err(FederationError::Aggregation {
                client_id: u.client_id,
                message: "update carries zero samples".into(),
            });
        }
        if !u.params.same_layout(&first.params) {
            return Err(FederationError::Aggregation {
                client_id: u.client_id,
                message: "parameter names or shapes differ from the other updates".into(),
            });
        }
    }
    let total: f64 = sorted.iter().map(|u| u.n_k as f64).sum();
    let mut acc: Vec<Tensor<f64>> = first
        .params
        .entries()
        .iter()
        .map(|e| Tensor::zeros(e.tensor.shape()))
        .collect();
    for u in &sorted {
        let w = u.n_k as f64 / total;
        for (a, e) in acc.iter_mut().zip(u.params.entries()) {
            for (s, &v) in a.data_mut().iter_mut().zip(e.tensor.data()) {
                *s += w * f64::from(v);
            }
        }
    }
    Ok(acc)
}

/// FedAvg: the weighted mean of the updates in the layout of the first one.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelParams, FederationError> {
    let acc = fedavg_f64(updates)?;
    let first = updates
        .iter()
        .min_by_key(|u| u.client_id)
        .expect("fedavg_f64 rejects empty input");
    let mut out = first.params.clone();
    for (e, a) in out.entries_mut().iter_mut().zip(acc) {
        e.tensor = a.cast();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_update(id: usize, v: f32, n_k: usize) -> ClientUpdate {
        let mut p = ModelParams::new();
        p.trainable("w", Tensor::scalar(v));
        ClientUpdate {
            client_id: id,
            params: p,
            n_k,
        }
    }

    #[test]
    fn selection_size_and_order() {
        let ids = select_clients(100, 0.1, 3, 9);
        assert_eq!(ids.len(), 10);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ids, select_clients(100, 0.1, 3, 9));
        assert_eq!(select_clients(100, 1.0, 0, 0), (0..100).collect::<Vec<_>>());
        assert_ne!(ids, select_clients(100, 0.1, 4, 9));
    }

    #[test]
    fn weighted_mean_example() {
        let avg = fedavg(&[scalar_update(0, 0.0, 1), scalar_update(1, 4.0, 3)]).unwrap();
        assert_eq!(avg.get("w").unwrap().item(), 3.0);
    }

    #[test]
    fn identical_updates_are_a_fixed_point() {
        let u = scalar_update(0, 0.123_456_7, 5);
        let mut v = u.clone();
        v.client_id = 4;
        assert_eq!(fedavg(&[u.clone(), v]).unwrap(), u.params);
    }

    #[test]
    fn mismatch_names_client() {
        let mut bad = scalar_update(7, 1.0, 1);
        bad.params = ModelParams::new();
        bad.params.trainable("w", Tensor::vector(vec![1.0, 2.0]));
        match fedavg(&[scalar_update(2, 0.0, 1), bad]) {
            Err(FederationError::Aggregation { client_id: 7, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(fedavg(&[]), Err(FederationError::NoUpdates { .. })));
        assert!(matches!(
            fedavg(&[scalar_update(3, 1.0, 0)]),
            Err(FederationError::Aggregation { client_id: 3, .. })
        ));
    }

    #[test]
    fn config_validation_names_key() {
        let mut c = FederationConfig {
            lr_a: -1.0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("lr_a"));
        c.lr_a = 0.01;
        c.client_fraction = 0.001;
        assert!(c.validate().unwrap_err().to_string().contains("client_fraction"));
        assert!(FederationConfig::default().validate().is_ok());
        assert_eq!(FederationConfig::default().clients_per_round(), 10);
    }
}
