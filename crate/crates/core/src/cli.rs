//! Experiment runner behind the `fedsemi` binary: configuration files,
//! replicate fan-out, CSV results, checkpoints and the latency bench.
//!
//! A configuration is a JSON object. Only `scheme` and `dataset` are
//! required:
//!
//! ```json
//! {
//!   "scheme": "SEMI",
//!   "dataset": { "synthetic": { "train_len": 20000 } },
//!   "K": 20, "C": 0.25, "T": 30, "r_l": 0.0625, "r_f": 0.5,
//!   "replicates": 8, "output_dir": "results/semi"
//! }
//! ```
//!
//! `dataset` may instead be `{"csv": {"train": "train.csv", "test": "test.csv"}}`;
//! relative paths are resolved against the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{self, BenchError, LatencyReport, MannWhitney, Pipeline};
use crate::checkpoint::{fnv1a, CheckpointError, ModelCheckpoint};
use crate::data::{
    load_csv_with, repr_dim, synth_generate, CsvOptions, DataError, SynthConfig, TimeSeriesDataset,
    DEFAULT_SAMPLE_RATE_HZ,
};
use crate::eval::{aggregate_replicates, EvalError, RoundMetrics};
use crate::federation::{
    run_experiment, Executor, FederationConfig, FederationError, PartitionKind, Scheme,
};
use crate::models::{
    AeVariant, Autoencoder, AutoencoderSpec, BaggingPolicy, Classifier, ClassifierHead,
    ClassifierSpec, ModelError,
};

pub const DEFAULT_REPLICATES: usize = 64;
pub const DEFAULT_OUTPUT_DIR: &str = "results";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    /// Unknown or missing keys and type errors; serde names the key.
    #[error("config: {0}")]
    Parse(String),
    #[error("config key {key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        source: FederationError,
    },
    #[error(transparent)]
    Federation(FederationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Config { key, message } => CliError::Config(ConfigError::Invalid {
                key: key.to_string(),
                message,
            }),
            e => CliError::Federation(e),
        }
    }
}

impl CliError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Replicate { .. } | CliError::Federation(_) => "federation",
            CliError::Data(_) => "data",
            CliError::Eval(_) => "eval",
            CliError::Model(_) => "model",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Bench(_) => "bench",
            CliError::Csv(_) => "csv",
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Config(c) = self {
            if let Some(k) = c.key() {
                v["key"] = k.into();
            }
        }
        v
    }
}

fn io_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_participants")]
    pub participants: usize,
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

fn default_participants() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Csv(CsvSource),
}

/// The file format; defaults are applied here and required keys checked later.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    scheme: Option<Scheme>,
    dataset: Option<DatasetSource>,
    #[serde(alias = "K")]
    num_clients: usize,
    #[serde(alias = "C")]
    client_fraction: f64,
    #[serde(alias = "T")]
    rounds: usize,
    lr_a: f64,
    lr_s: f64,
    e_a: usize,
    e_s: usize,
    #[serde(alias = "r_l")]
    label_ratio: f64,
    #[serde(alias = "r_f")]
    compression_ratio: f64,
    partition: PartitionKind,
    autoencoder: AeVariant,
    classifier: Option<ClassifierHead>,
    bagging: BaggingPolicy,
    eval_every: usize,
    window: usize,
    seed: u64,
    replicates: usize,
    output_dir: PathBuf,
}

impl Default for RawConfig {
    fn default() -> Self {
        let f = FederationConfig::default();
        Self {
            scheme: None,
            dataset: None,
            num_clients: f.num_clients,
            client_fraction: f.client_fraction,
            rounds: f.rounds,
            lr_a: f.lr_a,
            lr_s: f.lr_s,
            e_a: f.e_a,
            e_s: f.e_s,
            label_ratio: f.label_ratio,
            compression_ratio: f.compression_ratio,
            partition: f.partition,
            autoencoder: f.autoencoder,
            classifier: None,
            bagging: f.bagging,
            eval_every: f.eval_every,
            window: f.window,
            seed: f.seed,
            replicates: DEFAULT_REPLICATES,
            output_dir: DEFAULT_OUTPUT_DIR.into(),
        }
    }
}

/// A validated experiment: federation settings, data source and fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Settings of replicate 0; replicate `i` uses seed `federation.seed + i`.
    pub federation: FederationConfig,
    pub dataset: DatasetSource,
    pub replicates: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let missing = |key: &str| ConfigError::Invalid {
            key: key.into(),
            message: "missing required key".into(),
        };
        let scheme = raw.scheme.ok_or_else(|| missing("scheme"))?;
        let dataset = raw.dataset.ok_or_else(|| missing("dataset"))?;
        if raw.replicates == 0 {
            return Err(ConfigError::Invalid {
                key: "replicates".into(),
                message: "must be at least 1".into(),
            });
        }
        if let DatasetSource::Synthetic(s) = &dataset {
            s.validate().map_err(|e| ConfigError::Invalid {
                key: "dataset.synthetic".into(),
                message: e.to_string(),
            })?;
        }
        let federation = FederationConfig {
            num_clients: raw.num_clients,
            client_fraction: raw.client_fraction,
            rounds: raw.rounds,
            lr_a: raw.lr_a,
            lr_s: raw.lr_s,
            e_a: raw.e_a,
            e_s: raw.e_s,
            label_ratio: raw.label_ratio,
            compression_ratio: raw.compression_ratio,
            scheme,
            partition: raw.partition,
            autoencoder: raw.autoencoder,
            classifier: raw.classifier.unwrap_or(scheme.default_head()),
            bagging: raw.bagging,
            eval_every: raw.eval_every,
            window: raw.window,
            seed: raw.seed,
        };
        federation.validate().map_err(|e| match e {
            FederationError::Config { key, message } => ConfigError::Invalid {
                key: key.into(),
                message,
            },
            e => ConfigError::Parse(e.to_string()),
        })?;
        Ok(Self {
            federation,
            dataset,
            replicates: raw.replicates,
            output_dir: raw.output_dir,
        })
    }

    /// Reads a configuration file; relative CSV paths are taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let DatasetSource::Csv(c) = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut c.train, &mut c.test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn to_raw(&self) -> RawConfig {
        let f = &self.federation;
        RawConfig {
            scheme: Some(f.scheme),
            dataset: Some(self.dataset.clone()),
            num_clients: f.num_clients,
            client_fraction: f.client_fraction,
            rounds: f.rounds,
            lr_a: f.lr_a,
            lr_s: f.lr_s,
            e_a: f.e_a,
            e_s: f.e_s,
            label_ratio: f.label_ratio,
            compression_ratio: f.compression_ratio,
            partition: f.partition,
            autoencoder: f.autoencoder,
            classifier: Some(f.classifier),
            bagging: f.bagging,
            eval_every: f.eval_every,
            window: f.window,
            seed: f.seed,
            replicates: self.replicates,
            output_dir: self.output_dir.clone(),
        }
    }

    /// The configuration with every default spelled out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("config serializes")
    }

    /// FNV-1a hash of the canonical JSON, ignoring where results are written.
    pub fn fingerprint(&self) -> u64 {
        let mut raw = self.to_raw();
        raw.output_dir = PathBuf::new();
        fnv1a(serde_json::to_string(&raw).expect("config serializes").as_bytes())
    }

    /// Settings of replicate `i`.
    pub fn replicate(&self, i: usize) -> FederationConfig {
        FederationConfig {
            seed: self.federation.seed.wrapping_add(i as u64),
            ..self.federation.clone()
        }
    }

    /// `(train, test)` of the configured source.
    pub fn load_data(&self) -> Result<(TimeSeriesDataset, TimeSeriesDataset), DataError> {
        match &self.dataset {
            DatasetSource::Synthetic(s) => synth_generate(s),
            DatasetSource::Csv(c) => {
                let opts = CsvOptions {
                    num_classes: c.num_classes,
                    sample_rate_hz: c.sample_rate_hz,
                    participants: c.participants,
                };
                let train = load_csv_with(&c.train, &opts)?;
                let test = load_csv_with(
                    &c.test,
                    &CsvOptions {
                        num_classes: Some(c.num_classes.unwrap_or(train.num_classes)),
                        ..opts
                    },
                )?;
                Ok((train, test))
            }
        }
    }
}

/// Where `run` put its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Vec<RoundMetrics>,
}

pub fn checkpoint_path(dir: &Path, replicate: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("replicate_{replicate:03}.fsfl"))
}

/// Runs every replicate and writes `metrics.csv`, `aggregate.csv`,
/// `config.json` and one checkpoint per replicate under the output directory.
///
/// Replicates are spread over `exec`; clients within a replicate run inline.
pub fn run(cfg: &ExperimentConfig, exec: &Executor) -> Result<RunOutput, CliError> {
    let (train, test) = cfg.load_data()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir.join("checkpoints")).map_err(|e| io_err(dir, e))?;
    let ids: Vec<usize> = (0..cfg.replicates).collect();
    let runs = exec.map(&ids, |&i| {
        log::info!("replicate {i} of {}", cfg.replicates);
        run_experiment(&cfg.replicate(i), &train, &test, i, &Executor::Sequential)
            .map_err(|source| CliError::Replicate { replicate: i, source })
    });
    let fingerprint = cfg.fingerprint();
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        let run = run?;
        metrics.extend(run.metrics);
        let path = checkpoint_path(dir, i);
        ModelCheckpoint {
            autoencoder: run.state.autoencoder,
            classifier: run.state.classifier,
            config_fingerprint: fingerprint,
        }
        .save(&path)?;
        checkpoints.push(path);
    }
    let metrics_csv = dir.join("metrics.csv");
    write_metrics_csv(&metrics_csv, &metrics)?;
    let aggregate_csv = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&aggregate_csv)?;
    w.write_record(["scheme", "round", "mean", "stderr", "n"])?;
    for a in aggregate_replicates(&metrics)? {
        w.serialize((a.scheme.name(), a.round, a.mean, a.stderr, a.n))?;
    }
    w.flush().map_err(|e| io_err(&aggregate_csv, e))?;
    let config_json = dir.join("config.json");
    fs::write(&config_json, cfg.to_json()).map_err(|e| io_err(&config_json, e))?;
    Ok(RunOutput {
        metrics_csv,
        aggregate_csv,
        checkpoints,
        metrics,
    })
}

fn write_metrics_csv(path: &Path, rows: &[RoundMetrics]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate_id", "scheme", "round", "accuracy"])?;
    for r in rows {
        w.serialize((r.replicate_id, r.scheme.name(), r.round, r.accuracy))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Bench output: both timing reports and their comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub reports: Vec<LatencyReport>,
    pub comparison: MannWhitney,
    pub latency_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// The counterpart the checkpoint is compared against: the supervised LSTM
/// classifier for an encoder pipeline, the configured encoder pipeline otherwise.
fn counterpart(cfg: &ExperimentConfig, loaded: &Pipeline, nf: usize, classes: usize) -> Result<Pipeline, CliError> {
    Ok(if loaded.encoder.is_some() {
        Pipeline {
            name: Scheme::Supervised.name().into(),
            encoder: None,
            classifier: Classifier::build(ClassifierSpec::lstm(nf, classes), 0)?,
        }
    } else {
        let d = repr_dim(nf, cfg.federation.compression_ratio)?;
        Pipeline {
            name: Scheme::Semi.name().into(),
            encoder: Some(Autoencoder::build(
                AutoencoderSpec::new(cfg.federation.autoencoder, nf, d),
                0,
            )?),
            classifier: Classifier::build(ClassifierSpec::softmax(d, classes), 0)?,
        }
    })
}

/// Times the checkpointed pipeline and its counterpart on one-second test
/// windows, writing `latency.csv` and `bench.json` under the output directory.
pub fn bench(cfg: &ExperimentConfig, checkpoint: &Path, repetitions: usize) -> Result<BenchOutput, CliError> {
    let ckpt = ModelCheckpoint::load(checkpoint)?;
    let (_, test) = cfg.load_data()?;
    let nf = test.num_features();
    let classes = ckpt.classifier.spec().num_classes;
    let loaded = Pipeline {
        name: if ckpt.autoencoder.is_some() {
            Scheme::Semi.name().into()
        } else {
            cfg.federation.scheme.name().into()
        },
        encoder: ckpt.autoencoder,
        classifier: ckpt.classifier,
    };
    let other = counterpart(cfg, &loaded, nf, classes)?;
    let window = test.sample_rate_hz.round().max(1.0) as usize;
    let reports = vec![
        bench::time_pipeline(&loaded, &test.features, window, repetitions)?,
        bench::time_pipeline(&other, &test.features, window, repetitions)?,
    ];
    let comparison = bench::compare_latency(&reports[0], &reports[1])?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let latency_csv = dir.join("latency.csv");
    let file = fs::File::create(&latency_csv).map_err(|e| io_err(&latency_csv, e))?;
    bench::write_latency_csv(file, &reports)?;
    let summary_json = dir.join("bench.json");
    let summary = serde_json::json!({
        "reports": reports.iter().map(|r| r.summary()).collect::<Vec<_>>(),
        "mann_whitney": comparison,
    });
    fs::write(&summary_json, serde_json::to_string_pretty(&summary).expect("json"))
        .map_err(|e| io_err(&summary_json, e))?;
    Ok(BenchOutput {
        reports,
        comparison,
        latency_csv,
        summary_json,
    })
}

/// Human-readable description of a checkpoint file as JSON.
pub fn inspect(path: &Path) -> Result<serde_json::Value, CliError> {
    let bytes = fs::metadata(path).map_err(|e| io_err(path, e))?.len();
    let tensors = crate::checkpoint::load_tensors(path)?;
    let ckpt = ModelCheckpoint::from_tensors(tensors.clone())?;
    let list: Vec<_> = tensors
        .iter()
        .map(|(n, t)| serde_json::json!({ "name": n, "shape": t.shape() }))
        .collect();
    Ok(serde_json::json!({
        "file_bytes": bytes,
        "config_fingerprint": format!("{:016x}", ckpt.config_fingerprint),
        "autoencoder": ckpt.autoencoder.as_ref().map(|a| a.spec()),
        "autoencoder_parameters": ckpt.autoencoder.as_ref().map(|a| a.params().parameter_count()),
        "classifier": ckpt.classifier.spec(),
        "classifier_parameters": ckpt.classifier.params().parameter_count(),
        "tensors": list,
    }))
}
