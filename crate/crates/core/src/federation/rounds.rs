use rand::Rng;

use super::{
    fedavg, select_clients, ClientUpdate, Executor, FederationConfig, FederationError,
    PartitionKind, Scheme,
};
use crate::data::{
    partition_iid, partition_iid_labeled, partition_noniid, partition_noniid_labeled, repr_dim,
    sample_labeled_subset, ClientPartition, LabeledClientPartition, TimeSeriesDataset,
};
use crate::eval::{windowed_accuracy, EvalError, RoundMetrics};
use crate::models::{
    Autoencoder, AutoencoderSpec, BaggingPolicy, Classifier, ClassifierHead, ClassifierSpec,
    ModelError, TrainOptions, TrainStatus,
};
use crate::rng::{stream, stream_key, Purpose};
use crate::tensor::Tensor;

/// Client data as each scheme needs it.
#[derive(Debug, Clone, PartialEq)]
pub enum Clients {
    /// No clients take part (`CS`).
    None,
    Unlabeled(Vec<ClientPartition>),
    /// Only the fully supervised scheme sees client labels.
    Labeled(Vec<LabeledClientPartition>),
}

/// Everything a replicate trains and evaluates on.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    /// The server's labelled subset `D`.
    pub labeled: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
    pub clients: Clients,
}

/// Global models after `round` communication rounds.
#[derive(Debug, Clone)]
pub struct GlobalState {
    /// Present for `SEMI` only.
    pub autoencoder: Option<Autoencoder>,
    pub classifier: Classifier,
    pub round: usize,
}

/// Evaluation rows and final models of one replicate.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub metrics: Vec<RoundMetrics>,
    pub state: GlobalState,
}

/// Validates `cfg` and derives the labelled subset and client partitions.
pub fn prepare(
    cfg: &FederationConfig,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
) -> Result<Setup, FederationError> {
    cfg.validate()?;
    if test.num_features() != train.num_features() {
        return Err(FederationError::Config {
            key: "dataset",
            message: format!(
                "train has {} features, test has {}",
                train.num_features(),
                test.num_features()
            ),
        });
    }
    if test.len() < cfg.window {
        return Err(EvalError::ShortTest {
            window: cfg.window,
            have: test.len(),
        }
        .into());
    }
    if cfg.scheme == Scheme::Semi {
        let d = repr_dim(train.num_features(), cfg.compression_ratio)?;
        AutoencoderSpec::new(cfg.autoencoder, train.num_features(), d).validate()?;
    }
    let labeled = sample_labeled_subset(train, cfg.label_ratio, cfg.seed)?;
    let (k, np, seed) = (cfg.num_clients, train.participants, cfg.seed);
    let clients = match (cfg.scheme, cfg.partition) {
        (Scheme::Cs, _) => Clients::None,
        (Scheme::Supervised, PartitionKind::Iid) => {
            Clients::Labeled(partition_iid_labeled(train, k, np, seed)?)
        }
        (Scheme::Supervised, PartitionKind::NonIid) => {
            Clients::Labeled(partition_noniid_labeled(train, k, np, seed)?)
        }
        (_, PartitionKind::Iid) => Clients::Unlabeled(partition_iid(train, k, np, seed)?),
        (_, PartitionKind::NonIid) => Clients::Unlabeled(partition_noniid(train, k, np, seed)?),
    };
    Ok(Setup {
        labeled,
        test: test.clone(),
        clients,
    })
}

fn classifier_spec(head: ClassifierHead, input_dim: usize, classes: usize) -> ClassifierSpec {
    match head {
        ClassifierHead::Softmax => ClassifierSpec::softmax(input_dim, classes),
        ClassifierHead::Lstm => ClassifierSpec::lstm(input_dim, classes),
    }
}

fn server_opts(cfg: &FederationConfig) -> TrainOptions {
    TrainOptions {
        lr: cfg.lr_s,
        epochs: cfg.e_s,
        policy: cfg.bagging,
    }
}

fn client_opts(cfg: &FederationConfig) -> TrainOptions {
    TrainOptions {
        lr: cfg.lr_a,
        epochs: cfg.e_a,
        policy: cfg.bagging,
    }
}

/// Freshly initialised global models. `DA` additionally runs its
/// server-side warm-up on `D`.
pub fn init_state(cfg: &FederationConfig, setup: &Setup) -> Result<GlobalState, FederationError> {
    let nf = setup.labeled.num_features();
    let classes = setup.labeled.num_classes;
    let autoencoder = match cfg.scheme {
        Scheme::Semi => {
            let d = repr_dim(nf, cfg.compression_ratio)?;
            let spec = AutoencoderSpec::new(cfg.autoencoder, nf, d);
            Some(Autoencoder::build(spec, stream_key(cfg.seed, Purpose::ModelInit, 0, 0))?)
        }
        _ => None,
    };
    let input = autoencoder.as_ref().map_or(nf, |ae| ae.spec().repr_dim);
    let mut classifier = Classifier::build(
        classifier_spec(cfg.classifier, input, classes),
        stream_key(cfg.seed, Purpose::ModelInit, 1, 0),
    )?;
    if cfg.scheme == Scheme::Da {
        let mut rng = stream(cfg.seed, Purpose::ServerTraining, 0, 0);
        classifier = classifier
            .train(&setup.labeled.features, &setup.labeled.labels, &server_opts(cfg), &mut rng)?
            .model;
    }
    Ok(GlobalState {
        autoencoder,
        classifier,
        round: 0,
    })
}

/// Keeps successful updates; failed or empty clients are logged and dropped.
fn gather(
    round: usize,
    results: Vec<(usize, Result<Option<ClientUpdate>, ModelError>)>,
) -> Result<Vec<ClientUpdate>, FederationError> {
    let mut updates = Vec::with_capacity(results.len());
    for (id, r) in results {
        match r {
            Ok(Some(u)) => updates.push(u),
            Ok(None) => log::warn!("round {round}: client {id} had no data and was skipped"),
            Err(e) => log::warn!("round {round}: client {id} dropped: {e}"),
        }
    }
    if updates.is_empty() {
        return Err(FederationError::NoUpdates { round });
    }
    Ok(updates)
}

fn lookup<P>(parts: &[P], id: usize, client_id: impl Fn(&P) -> usize) -> Result<&P, ModelError> {
    parts
        .get(id)
        .filter(|p| client_id(p) == id)
        .or_else(|| parts.iter().find(|p| client_id(p) == id))
        .ok_or_else(|| ModelError::InvalidSpec(format!("no partition for client {id}")))
}

/// One `SEMI` round: local autoencoder training, FedAvg, then the server
/// encodes `D` and trains the classifier on the representations.
pub fn run_round_semi(
    state: &GlobalState,
    cfg: &FederationConfig,
    partitions: &[ClientPartition],
    labeled: &TimeSeriesDataset,
    exec: &Executor,
) -> Result<GlobalState, FederationError> {
    let t = state.round + 1;
    let ae = state.autoencoder.as_ref().ok_or_else(|| FederationError::Config {
        key: "scheme",
        message: "SEMI needs a global autoencoder".into(),
    })?;
    let opts = client_opts(cfg);
    let ids = select_clients(cfg.num_clients, cfg.client_fraction, t, cfg.seed);
    let results = exec.map(&ids, |&id| {
        let r = lookup(partitions, id, |p| p.client_id).and_then(|part| {
            let mut rng = stream(cfg.seed, Purpose::ClientTraining, t as u64, id as u64);
            let out = ae.train_locally(&part.samples, &opts, &mut rng)?;
            Ok((out.status == TrainStatus::Trained).then(|| ClientUpdate {
                client_id: id,
                params: out.model.into_params(),
                n_k: part.n_k(),
            }))
        });
        (id, r)
    });
    let updates = gather(t, results)?;
    let new_ae = Autoencoder::from_params(*ae.spec(), fedavg(&updates)?)?;
    let reps = new_ae.encode(&labeled.features)?;
    let mut rng = stream(cfg.seed, Purpose::ServerTraining, t as u64, 0);
    let classifier = state
        .classifier
        .train(&reps, &labeled.labels, &server_opts(cfg), &mut rng)?
        .model;
    Ok(GlobalState {
        autoencoder: Some(new_ae),
        classifier,
        round: t,
    })
}

/// One `SUPERVISED` round: clients train the classifier on their labelled
/// data and the server averages it.
pub fn run_round_supervised(
    state: &GlobalState,
    cfg: &FederationConfig,
    partitions: &[LabeledClientPartition],
    exec: &Executor,
) -> Result<GlobalState, FederationError> {
    let t = state.round + 1;
    let opts = client_opts(cfg);
    let ids = select_clients(cfg.num_clients, cfg.client_fraction, t, cfg.seed);
    let results = exec.map(&ids, |&id| {
        let r = lookup(partitions, id, |p| p.client_id).and_then(|part| {
            if part.n_k() == 0 {
                return Ok(None);
            }
            let mut rng = stream(cfg.seed, Purpose::ClientTraining, t as u64, id as u64);
            let out = state.classifier.train(&part.samples, &part.labels, &opts, &mut rng)?;
            Ok(Some(ClientUpdate {
                client_id: id,
                params: out.model.into_params(),
                n_k: part.n_k(),
            }))
        });
        (id, r)
    });
    let updates = gather(t, results)?;
    let classifier = Classifier::from_params(*state.classifier.spec(), fedavg(&updates)?)?;
    Ok(GlobalState {
        autoencoder: None,
        classifier,
        round: t,
    })
}

/// One `CS` round: the server trains on the raw features of `D`.
pub fn run_round_cs(
    state: &GlobalState,
    cfg: &FederationConfig,
    labeled: &TimeSeriesDataset,
) -> Result<GlobalState, FederationError> {
    let t = state.round + 1;
    let mut rng = stream(cfg.seed, Purpose::ServerTraining, t as u64, 0);
    let classifier = state
        .classifier
        .train(&labeled.features, &labeled.labels, &server_opts(cfg), &mut rng)?
        .model;
    Ok(GlobalState {
        autoencoder: None,
        classifier,
        round: t,
    })
}

/// Labels `samples` with `classifier`, cutting them into consecutive chunks
/// whose lengths are drawn from the policy's sequence-length range. Each
/// chunk is classified from a fresh state.
pub fn pseudo_label<R: Rng + ?Sized>(
    classifier: &Classifier,
    samples: &Tensor,
    policy: &BaggingPolicy,
    rng: &mut R,
) -> Result<Vec<usize>, ModelError> {
    policy.validate()?;
    let n = samples.rows();
    let mut labels = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = rng.random_range(policy.seq_min..=policy.seq_max).min(n - start);
        labels.extend(classifier.classify(&samples.slice_rows(start, start + len))?);
        start += len;
    }
    Ok(labels)
}

/// One `DA` round: clients pseudo-label and train the classifier, the server
/// averages it and fine-tunes on `D`.
pub fn run_round_da(
    state: &GlobalState,
    cfg: &FederationConfig,
    partitions: &[ClientPartition],
    labeled: &TimeSeriesDataset,
    exec: &Executor,
) -> Result<GlobalState, FederationError> {
    let t = state.round + 1;
    let opts = client_opts(cfg);
    let ids = select_clients(cfg.num_clients, cfg.client_fraction, t, cfg.seed);
    let results = exec.map(&ids, |&id| {
        let r = lookup(partitions, id, |p| p.client_id).and_then(|part| {
            if part.n_k() == 0 {
                return Ok(None);
            }
            let mut lrng = stream(cfg.seed, Purpose::PseudoLabel, t as u64, id as u64);
            let pseudo = pseudo_label(&state.classifier, &part.samples, &cfg.bagging, &mut lrng)?;
            let mut rng = stream(cfg.seed, Purpose::ClientTraining, t as u64, id as u64);
            let out = state.classifier.train(&part.samples, &pseudo, &opts, &mut rng)?;
            Ok(Some(ClientUpdate {
                client_id: id,
                params: out.model.into_params(),
                n_k: part.n_k(),
            }))
        });
        (id, r)
    });
    let updates = gather(t, results)?;
    let averaged = Classifier::from_params(*state.classifier.spec(), fedavg(&updates)?)?;
    let mut rng = stream(cfg.seed, Purpose::ServerTraining, t as u64, 0);
    let classifier = averaged
        .train(&labeled.features, &labeled.labels, &server_opts(cfg), &mut rng)?
        .model;
    Ok(GlobalState {
        autoencoder: None,
        classifier,
        round: t,
    })
}

/// Advances `state` by one round of `cfg.scheme`.
pub fn run_round(
    state: &GlobalState,
    cfg: &FederationConfig,
    setup: &Setup,
    exec: &Executor,
) -> Result<GlobalState, FederationError> {
    let wrong = |what: &str| FederationError::Config {
        key: "scheme",
        message: format!("{} needs {what}", cfg.scheme),
    };
    match (cfg.scheme, &setup.clients) {
        (Scheme::Semi, Clients::Unlabeled(p)) => run_round_semi(state, cfg, p, &setup.labeled, exec),
        (Scheme::Da, Clients::Unlabeled(p)) => run_round_da(state, cfg, p, &setup.labeled, exec),
        (Scheme::Supervised, Clients::Labeled(p)) => run_round_supervised(state, cfg, p, exec),
        (Scheme::Cs, _) => run_round_cs(state, cfg, &setup.labeled),
        (Scheme::Supervised, _) => Err(wrong("labelled partitions")),
        _ => Err(wrong("unlabelled partitions")),
    }
}

fn evaluate(
    state: &GlobalState,
    cfg: &FederationConfig,
    setup: &Setup,
    replicate_id: usize,
) -> Result<RoundMetrics, FederationError> {
    let acc = windowed_accuracy(
        state.autoencoder.as_ref(),
        &state.classifier,
        &setup.test,
        cfg.window,
    )?;
    Ok(RoundMetrics {
        replicate_id,
        scheme: cfg.scheme,
        round: state.round,
        accuracy: acc.accuracy,
        windows_evaluated: acc.windows,
    })
}

/// Runs `cfg.rounds` rounds, evaluating at round 0 and every `eval_every`
/// rounds; each row is passed to `on_metrics` as soon as it exists.
pub fn run_experiment_with(
    cfg: &FederationConfig,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    replicate_id: usize,
    exec: &Executor,
    mut on_metrics: impl FnMut(&RoundMetrics),
) -> Result<ExperimentRun, FederationError> {
    let setup = prepare(cfg, train, test)?;
    let mut state = init_state(cfg, &setup)?;
    let mut metrics = Vec::new();
    let mut record = |state: &GlobalState| -> Result<(), FederationError> {
        let m = evaluate(state, cfg, &setup, replicate_id)?;
        log::debug!(
            "replicate {replicate_id} {} round {}: accuracy {:.4}",
            cfg.scheme,
            m.round,
            m.accuracy
        );
        on_metrics(&m);
        metrics.push(m);
        Ok(())
    };
    record(&state)?;
    for _ in 0..cfg.rounds {
        state = run_round(&state, cfg, &setup, exec)?;
        if state.round % cfg.eval_every == 0 {
            record(&state)?;
        }
    }
    Ok(ExperimentRun { metrics, state })
}

pub fn run_experiment(
    cfg: &FederationConfig,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    replicate_id: usize,
    exec: &Executor,
) -> Result<ExperimentRun, FederationError> {
    run_experiment_with(cfg, train, test, replicate_id, exec, |_| {})
}
