//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (visible without `--nocapture`) and then asserts.
//!
//! The trend criteria share one cached set of federated runs on the
//! synthetic benchmark: 9 features, 3 classes, 50k/10k samples, K = 20,
//! C = 0.25, T = 30, r_l = 1/16, 8 replicates.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use fedsemi::bench::{self, mac_count, Pipeline};
use fedsemi::checkpoint::{decode_tensors, encode_tensors, CheckpointError, ModelCheckpoint};
use fedsemi::cli::{self, ExperimentConfig};
use fedsemi::data::{repr_dim, synth_generate, SynthConfig, TimeSeriesDataset};
use fedsemi::eval::{converged_accuracy, mean_stderr, windowed_accuracy_with};
use fedsemi::federation::{
    fedavg_f64, run_experiment, ClientUpdate, Executor, FederationConfig, PartitionKind, Scheme,
};
use fedsemi::models::{
    AeVariant, Autoencoder, AutoencoderSpec, BaggingPolicy, Classifier, ClassifierSpec,
    TrainOptions,
};
use fedsemi::params::ModelParams;
use fedsemi::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REPLICATES: usize = 8;
const ROUNDS: usize = 30;
const LAST_EVALS: usize = 3;

fn report(id: u8, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {id:>2} {verdict} {name}: {detail}");
}

#[derive(Debug, Clone, Copy)]
struct Summary {
    mean: f64,
    se: f64,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.se)
    }
}

type Key = (Scheme, &'static str, u32);

static TRENDS: Mutex<BTreeMap<Key, Summary>> = Mutex::new(BTreeMap::new());

/// Converged accuracy over the replicates of one setup; computed once.
fn trend(scheme: Scheme, partition: PartitionKind, rf_quarters: u32) -> Summary {
    let label = match partition {
        PartitionKind::Iid => "IID",
        PartitionKind::NonIid => "NONIID",
    };
    let mut cache = TRENDS.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(s) = cache.get(&(scheme, label, rf_quarters)) {
        return *s;
    }
    let converged: Vec<f64> = (0..REPLICATES)
        .map(|rep| {
            let seed = rep as u64;
            let (train, test) = synth_generate(&SynthConfig { seed, ..Default::default() }).unwrap();
            let cfg = FederationConfig {
                num_clients: 20,
                client_fraction: 0.25,
                rounds: ROUNDS,
                label_ratio: 1.0 / 16.0,
                compression_ratio: f64::from(rf_quarters) / 4.0,
                scheme,
                partition,
                classifier: scheme.default_head(),
                seed,
                ..Default::default()
            };
            let run = run_experiment(&cfg, &train, &test, rep, &Executor::Sequential).unwrap();
            converged_accuracy(&run.metrics, LAST_EVALS).unwrap()
        })
        .collect();
    let (mean, se) = mean_stderr(&converged);
    let s = Summary { mean, se };
    cache.insert((scheme, label, rf_quarters), s);
    s
}

#[test]
fn c01_gradient_suite() {
    let started = Instant::now();
    let mut worst = Vec::new();
    for (name, make) in common::gradcheck::LAYERS {
        worst.push((name, common::gradcheck::check_layer(make)));
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst.iter().all(|(_, e)| *e < common::gradcheck::TOLERANCE) && secs < 60.0;
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        1,
        "finite-difference gradients",
        pass,
        &format!("{} cases per layer, max rel err {detail}; {secs:.1}s", common::gradcheck::CASES),
    );
    assert!(pass);
}

#[test]
fn c02_fedavg_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut permutation_exact = true;
    for _ in 0..200 {
        let m = rng.random_range(1..=10);
        let shapes: Vec<Vec<usize>> = (0..rng.random_range(1..4))
            .map(|_| (0..rng.random_range(1..3)).map(|_| rng.random_range(1..5)).collect())
            .collect();
        let mut updates: Vec<ClientUpdate> = (0..m)
            .map(|i| {
                let mut params = ModelParams::new();
                for (j, s) in shapes.iter().enumerate() {
                    let n: usize = s.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-10.0f32..10.0)).collect();
                    params.trainable(format!("p{j}"), Tensor::new(s.clone(), data).unwrap());
                }
                ClientUpdate { client_id: i * 7 + 3, params, n_k: rng.random_range(1..100_000) }
            })
            .collect();
        let got = fedavg_f64(&updates).unwrap();
        let total: f64 = updates.iter().map(|u| u.n_k as f64).sum();
        for (j, t) in got.iter().enumerate() {
            for (e, &v) in t.data().iter().enumerate() {
                let want: f64 = updates
                    .iter()
                    .map(|u| u.n_k as f64 * f64::from(u.params.entries()[j].tensor.data()[e]))
                    .sum::<f64>()
                    / total;
                worst = worst.max((v - want).abs());
            }
        }
        updates.shuffle(&mut rng);
        permutation_exact &= fedavg_f64(&updates).unwrap() == got;
    }
    let pass = worst <= 1e-12 && permutation_exact;
    report(
        2,
        "FedAvg weighted mean",
        pass,
        &format!("max |error| {worst:.1e} over 200 draws, permutation exact: {permutation_exact}"),
    );
    assert!(pass);
}

#[test]
fn c03_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let csvs: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let json = format!(
                r#"{{"scheme":"SEMI","dataset":{{"synthetic":{{}}}},"K":20,"C":0.25,"T":6,"replicates":2,"output_dir":{:?}}}"#,
                d.path().display().to_string()
            );
            let cfg = ExperimentConfig::from_json(&json).unwrap();
            let out = cli::run(&cfg, &Executor::Sequential).unwrap();
            std::fs::read(out.metrics_csv).unwrap()
        })
        .collect();
    let csv_identical = csvs[0] == csvs[1];

    let (train, test) = synth_generate(&SynthConfig::default()).unwrap();
    let pool = Executor::pool(4).unwrap();
    let mut models_identical = true;
    for scheme in [Scheme::Semi, Scheme::Supervised, Scheme::Da] {
        let cfg = FederationConfig {
            num_clients: 20,
            client_fraction: 0.25,
            rounds: 6,
            scheme,
            classifier: scheme.default_head(),
            ..Default::default()
        };
        let a = run_experiment(&cfg, &train, &test, 0, &Executor::Sequential).unwrap();
        let b = run_experiment(&cfg, &train, &test, 0, &pool).unwrap();
        models_identical &= a.state.classifier == b.state.classifier
            && a.state.autoencoder == b.state.autoencoder
            && a.metrics == b.metrics;
    }
    let pass = csv_identical && models_identical;
    report(
        3,
        "determinism",
        pass,
        &format!(
            "metrics.csv byte-identical: {csv_identical}; sequential vs pool models identical: {models_identical}"
        ),
    );
    assert!(pass);
}

#[test]
fn c04_semi_beats_centralized() {
    let started = Instant::now();
    let semi = trend(Scheme::Semi, PartitionKind::Iid, 2);
    let cs = trend(Scheme::Cs, PartitionKind::Iid, 2);
    let secs = started.elapsed().as_secs_f64();
    let gap = semi.mean - cs.mean;
    let pass = gap >= 0.02 && semi.mean - semi.se > cs.mean + cs.se && secs < 1800.0;
    report(
        4,
        "SEMI above CS",
        pass,
        &format!("SEMI {semi}, CS {cs}, gap {:.2} pp; {secs:.0}s", 100.0 * gap),
    );
    assert!(pass);
}

#[test]
fn c05_supervised_not_below_semi() {
    let semi = trend(Scheme::Semi, PartitionKind::Iid, 2);
    let sup = trend(Scheme::Supervised, PartitionKind::Iid, 2);
    let pass = sup.mean >= semi.mean - semi.se;
    report(5, "SUPERVISED at least SEMI minus 1 stderr", pass, &format!("SUPERVISED {sup}, SEMI {semi}"));
    assert!(pass);
}

#[test]
fn c06_iid_noniid_insensitive() {
    let iid = trend(Scheme::Semi, PartitionKind::Iid, 2);
    let non = trend(Scheme::Semi, PartitionKind::NonIid, 2);
    let diff = (iid.mean - non.mean).abs();
    let bound = 2.0 * iid.se.hypot(non.se);
    let pass = diff <= bound;
    report(
        6,
        "SEMI IID vs non-IID",
        pass,
        &format!("IID {iid}, non-IID {non}, |diff| {diff:.4} vs 2 stderr {bound:.4}"),
    );
    assert!(pass);
}

#[test]
fn c07_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact = true;
    for windows in 1..=4 {
        let n = windows * 5000;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if rng.random_bool(0.6) { l } else { rng.random_range(0..5) })
            .collect();
        let ds = TimeSeriesDataset::new(Tensor::zeros(&[n, 1]), labels.clone(), 5).unwrap();
        let mut at = 0;
        let got = windowed_accuracy_with(&ds, 5000, |x| {
            let p = preds[at..at + x.rows()].to_vec();
            at += x.rows();
            Ok(p)
        })
        .unwrap();
        let mut sum = 0.0;
        for w in 0..windows {
            let mut hits = 0;
            for i in w * 5000..(w + 1) * 5000 {
                if labels[i] == preds[i] {
                    hits += 1;
                }
            }
            sum += hits as f64 / 5000.0;
        }
        exact &= got.accuracy == sum / windows as f64 && got.windows == windows;
    }
    let (_, se) = mean_stderr(&[0.5, 0.7]);
    let se_ok = (se - 0.1).abs() < 1e-12;
    let pass = exact && se_ok;
    report(
        7,
        "windowed accuracy and stderr",
        pass,
        &format!("brute-force equality: {exact}; stderr([0.5, 0.7]) = {se:.15}"),
    );
    assert!(pass);
}

fn semi_parameter_count(nf: usize, rf: f64, classes: usize) -> usize {
    let d = repr_dim(nf, rf).unwrap();
    let ae = Autoencoder::build(AutoencoderSpec::new(AeVariant::Lstm, nf, d), 0).unwrap();
    let cls = Classifier::build(ClassifierSpec::softmax(d, classes), 0).unwrap();
    ae.params().parameter_count() + cls.params().parameter_count()
}

#[test]
fn c08_compression_ratio_sweep() {
    let quarter = trend(Scheme::Semi, PartitionKind::Iid, 1);
    let three = trend(Scheme::Semi, PartitionKind::Iid, 3);
    let diff = (quarter.mean - three.mean).abs();
    let (p8, p34) = (semi_parameter_count(9, 0.125, 3), semi_parameter_count(9, 0.75, 3));
    let pass = diff <= 0.05 && p8 < p34;
    report(
        8,
        "compression ratio insensitivity",
        pass,
        &format!(
            "r_f=1/4 {quarter}, r_f=3/4 {three}, |diff| {:.2} pp; parameters r_f=1/8 {p8} < r_f=3/4 {p34}",
            100.0 * diff
        ),
    );
    assert!(pass);
}

fn semi_pipeline(nf: usize, classes: usize) -> Pipeline {
    let d = repr_dim(nf, 0.5).unwrap();
    Pipeline {
        name: "SEMI".into(),
        encoder: Some(Autoencoder::build(AutoencoderSpec::new(AeVariant::Lstm, nf, d), 1).unwrap()),
        classifier: Classifier::build(ClassifierSpec::softmax(d, classes), 2).unwrap(),
    }
}

fn supervised_pipeline(nf: usize, classes: usize) -> Pipeline {
    Pipeline {
        name: "SUPERVISED".into(),
        encoder: None,
        classifier: Classifier::build(ClassifierSpec::lstm(nf, classes), 3).unwrap(),
    }
}

#[test]
fn c09_latency_proxy() {
    let mut analytic = Vec::new();
    for (nf, classes) in [(79, 18), (9, 3), (52, 12)] {
        let semi = mac_count(&semi_pipeline(nf, classes).layers(), bench::DEFAULT_WINDOW).unwrap();
        let sup = mac_count(&supervised_pipeline(nf, classes).layers(), bench::DEFAULT_WINDOW).unwrap();
        analytic.push((nf, semi, sup));
    }
    let pass = analytic.iter().all(|(_, s, u)| s < u);

    let (_, test) = synth_generate(&SynthConfig { test_len: 100 * 33, ..Default::default() }).unwrap();
    let a = bench::time_pipeline(&semi_pipeline(9, 3), &test.features, 33, bench::DEFAULT_REPETITIONS).unwrap();
    let b = bench::time_pipeline(&supervised_pipeline(9, 3), &test.features, 33, bench::DEFAULT_REPETITIONS).unwrap();
    let mw = bench::compare_latency(&a, &b).unwrap();
    let detail = analytic
        .iter()
        .map(|(nf, s, u)| format!("N^f={nf}: {s} < {u}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        9,
        "MAC count of SEMI below supervised LSTM",
        pass,
        &format!(
            "{detail}; wall-clock (informational) over {} windows: SEMI median {:.1}us, SUPERVISED {:.1}us, Mann-Whitney p {:.2e}, faster {:?}",
            a.latencies_us.len(),
            a.median_us,
            b.median_us,
            mw.p_value,
            mw.faster
        ),
    );
    assert!(pass);
}

#[test]
fn c10_checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::new(vec![64, 9], (0..64 * 9).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let opts = TrainOptions { lr: 0.01, epochs: 1, policy: BaggingPolicy::default() };
    let mut models = Vec::new();
    for v in [AeVariant::Fc, AeVariant::Cnn, AeVariant::Lstm] {
        // One epoch of training moves the batch-norm buffers off their defaults.
        let ae = Autoencoder::build(AutoencoderSpec::new(v, 9, 4), 5).unwrap();
        let ae = ae.train_locally(&x, &opts, &mut rng).unwrap().model;
        models.push(ModelCheckpoint {
            autoencoder: Some(ae),
            classifier: Classifier::build(ClassifierSpec::softmax(4, 3), 6).unwrap(),
            config_fingerprint: 0xdead_beef_0123_4567,
        });
    }
    models.push(ModelCheckpoint {
        autoencoder: None,
        classifier: Classifier::build(ClassifierSpec::lstm(9, 3), 7).unwrap(),
        config_fingerprint: u64::MAX,
    });
    let dir = tempfile::tempdir().unwrap();
    let mut bit_exact = true;
    for (i, m) in models.iter().enumerate() {
        let path = dir.path().join(format!("{i}.fsfl"));
        m.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        let bits = |c: &ModelCheckpoint| -> Vec<u32> {
            c.autoencoder
                .iter()
                .flat_map(|a| a.params().entries().to_vec())
                .chain(c.classifier.params().entries().to_vec())
                .flat_map(|e| e.tensor.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        bit_exact &= bits(m) == bits(&back) && back == *m;
    }

    let good = encode_tensors(&models[1].to_tensors()).unwrap();
    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        decode_tensors(&b)
    };
    let magic = corrupt(&|b| b[1] = b'X');
    let version = corrupt(&|b| b[4] = 9);
    let checksum = corrupt(&|b| {
        let i = b.len() / 2;
        b[i] ^= 0x10;
    });
    let truncated = corrupt(&|b| b.truncate(b.len() - 100));
    let classes_ok = matches!(magic, Err(CheckpointError::BadMagic))
        && matches!(version, Err(CheckpointError::UnsupportedVersion(9)))
        && matches!(checksum, Err(CheckpointError::ChecksumMismatch { .. }))
        && matches!(truncated, Err(CheckpointError::Truncated { .. }));
    let empty_len = encode_tensors(&[]).unwrap().len();
    let pass = bit_exact && classes_ok && empty_len == 20;
    report(
        10,
        "checkpoint round trip",
        pass,
        &format!(
            "FC/CNN/LSTM autoencoders and LSTM head bit-exact: {bit_exact}; distinct errors for magic, version, checksum, truncation: {classes_ok}; empty file {empty_len} bytes"
        ),
    );
    assert!(pass);
}
