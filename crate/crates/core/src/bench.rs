//! Inference latency on one-second windows and analytic operation counts.
//!
//! The wall-clock numbers depend on the host; [`mac_count`] is the
//! deterministic proxy.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::checkpoint::{encode_tensors, CheckpointError, ModelCheckpoint};
use crate::models::{AeVariant, Autoencoder, Classifier, ClassifierHead, ModelError, CNN_CHANNELS};
use crate::tensor::Tensor;

/// One second of samples at 33 Hz.
pub const DEFAULT_WINDOW: usize = 33;
pub const DEFAULT_REPETITIONS: usize = 10;
/// Fewest windows per side accepted by [`compare_latency`].
pub const MIN_COMPARE_WINDOWS: usize = 30;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need ≥1 repetition")]
    NoRepetitions,
    #[error("test data has {have} samples, one window needs {need}")]
    ShortTest { need: usize, have: usize },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("the pipeline has no model layers")]
    EmptyModel,
    #[error("no operation count for layer {0:?}")]
    UnsupportedLayer(String),
    #[error("need at least {need} windows per report, got {have}")]
    TooFewWindows { need: usize, have: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One layer as seen by the operation counter; counts are per time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Dense { inp: usize, out: usize },
    Lstm { inp: usize, hidden: usize },
    /// Convolution over `positions` outputs.
    Conv1d { cin: usize, cout: usize, kernel: usize, positions: usize },
    ConvTranspose1d { cin: usize, cout: usize, kernel: usize, positions: usize },
    BatchNorm { channels: usize, positions: usize },
    /// Anything without a known count.
    Other(String),
}

impl Layer {
    fn macs_per_step(&self) -> Result<u64, BenchError> {
        let m = |v: usize| v as u64;
        Ok(match *self {
            Layer::Dense { inp, out } => m(inp) * m(out),
            Layer::Lstm { inp, hidden } => 4 * m(hidden) * m(inp + hidden),
            Layer::Conv1d { cin, cout, kernel, positions }
            | Layer::ConvTranspose1d { cin, cout, kernel, positions } => {
                m(cin) * m(cout) * m(kernel) * m(positions)
            }
            Layer::BatchNorm { channels, positions } => m(channels) * m(positions),
            Layer::Other(ref name) => return Err(BenchError::UnsupportedLayer(name.clone())),
        })
    }
}

/// Multiply-accumulate operations of one forward pass over `window_len` steps.
pub fn mac_count(layers: &[Layer], window_len: usize) -> Result<u64, BenchError> {
    let per_step = layers
        .iter()
        .map(Layer::macs_per_step)
        .sum::<Result<u64, _>>()?;
    Ok(per_step * window_len as u64)
}

/// Layers the encoder runs at inference time; the decoder is not used.
pub fn encoder_layers(ae: &Autoencoder) -> Vec<Layer> {
    let s = ae.spec();
    let (nf, d) = (s.input_dim, s.repr_dim);
    match s.variant {
        AeVariant::Fc => vec![Layer::Dense { inp: nf, out: d }],
        AeVariant::Cnn => vec![
            Layer::Conv1d { cin: 1, cout: CNN_CHANNELS, kernel: 3, positions: nf },
            Layer::BatchNorm { channels: CNN_CHANNELS, positions: nf },
            Layer::Dense { inp: CNN_CHANNELS * nf, out: d },
        ],
        AeVariant::Lstm => vec![Layer::Lstm { inp: nf, hidden: d }],
    }
}

pub fn classifier_layers(cls: &Classifier) -> Vec<Layer> {
    let s = cls.spec();
    match s.head {
        ClassifierHead::Softmax => vec![Layer::Dense { inp: s.input_dim, out: s.num_classes }],
        ClassifierHead::Lstm => vec![
            Layer::Lstm { inp: s.input_dim, hidden: s.hidden_dim },
            Layer::Dense { inp: s.hidden_dim, out: s.num_classes },
        ],
    }
}

/// What runs on the device: an optional encoder followed by a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub name: String,
    pub encoder: Option<Autoencoder>,
    pub classifier: Classifier,
}

impl Pipeline {
    pub fn layers(&self) -> Vec<Layer> {
        let mut out = self.encoder.as_ref().map(encoder_layers).unwrap_or_default();
        out.extend(classifier_layers(&self.classifier));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.as_ref().map_or(0, |e| e.params().parameter_count())
            + self.classifier.params().parameter_count()
    }

    /// Size of the models in the checkpoint format.
    pub fn serialized_bytes(&self) -> Result<usize, BenchError> {
        let ckpt = ModelCheckpoint {
            autoencoder: self.encoder.clone(),
            classifier: self.classifier.clone(),
            config_fingerprint: 0,
        };
        Ok(encode_tensors(&ckpt.to_tensors())?.len())
    }

    /// Class of every sample of one window.
    pub fn infer(&self, window: &Tensor) -> Result<Vec<usize>, BenchError> {
        Ok(match &self.encoder {
            Some(ae) => self.classifier.classify(&ae.encode(window)?)?,
            None => self.classifier.classify(window)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub scheme: String,
    /// Mean over repetitions, per window.
    pub latencies_us: Vec<f64>,
    /// Fastest repetition, per window.
    pub min_latencies_us: Vec<f64>,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub window_len: usize,
    pub macs_per_window: u64,
    pub parameter_count: usize,
    pub serialized_bytes: usize,
}

/// Headline numbers of a report, without the per-window latencies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencySummary<'a> {
    pub scheme: &'a str,
    pub windows: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub macs_per_window: u64,
    pub parameter_count: usize,
    pub serialized_bytes: usize,
}

impl LatencyReport {
    pub fn summary(&self) -> LatencySummary<'_> {
        LatencySummary {
            scheme: &self.scheme,
            windows: self.latencies_us.len(),
            mean_us: self.mean_us,
            median_us: self.median_us,
            p95_us: self.p95_us,
            macs_per_window: self.macs_per_window,
            parameter_count: self.parameter_count,
            serialized_bytes: self.serialized_bytes,
        }
    }
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Times `pipeline` on consecutive non-overlapping windows of `test`.
///
/// Each window is run once untimed, then `repetitions` timed passes follow;
/// the trailing partial window is dropped.
pub fn time_pipeline(
    pipeline: &Pipeline,
    test: &Tensor,
    window_len: usize,
    repetitions: usize,
) -> Result<LatencyReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    if window_len == 0 {
        return Err(BenchError::ZeroWindow);
    }
    let layers = pipeline.layers();
    if layers.is_empty() {
        return Err(BenchError::EmptyModel);
    }
    let windows = test.rows() / window_len;
    if windows == 0 {
        return Err(BenchError::ShortTest {
            need: window_len,
            have: test.rows(),
        });
    }
    let mut latencies = Vec::with_capacity(windows);
    let mut mins = Vec::with_capacity(windows);
    for w in 0..windows {
        let x = test.slice_rows(w * window_len, (w + 1) * window_len);
        std::hint::black_box(pipeline.infer(&x)?);
        let mut total = 0.0;
        let mut fastest = f64::INFINITY;
        for _ in 0..repetitions {
            let t = Instant::now();
            std::hint::black_box(pipeline.infer(std::hint::black_box(&x))?);
            let us = t.elapsed().as_secs_f64() * 1e6;
            total += us;
            fastest = fastest.min(us);
        }
        latencies.push(total / repetitions as f64);
        mins.push(fastest);
    }
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        scheme: pipeline.name.clone(),
        mean_us: latencies.iter().sum::<f64>() / windows as f64,
        median_us: median(&sorted),
        p95_us: quantile(&sorted, 0.95),
        latencies_us: latencies,
        min_latencies_us: mins,
        window_len,
        macs_per_window: mac_count(&layers, window_len)?,
        parameter_count: pipeline.parameter_count(),
        serialized_bytes: pipeline.serialized_bytes()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Faster {
    A,
    B,
}

/// Two-sided Mann–Whitney U test with the normal approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
    /// Which side tends to the smaller latency; `None` when U sits at its mean.
    pub faster: Option<Faster>,
}

/// Compares the per-window latencies of two reports.
pub fn compare_latency(a: &LatencyReport, b: &LatencyReport) -> Result<MannWhitney, BenchError> {
    mann_whitney(&a.latencies_us, &b.latencies_us)
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney, BenchError> {
    let have = a.len().min(b.len());
    if have < MIN_COMPARE_WINDOWS {
        return Err(BenchError::TooFewWindows {
            need: MIN_COMPARE_WINDOWS,
            have,
        });
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut rank_a, mut ties) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Tied values share the average of ranks i+1..=j.
        let avg = (i + j + 1) as f64 / 2.0;
        rank_a += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    let u = rank_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let z = if var > 0.0 { (u - mean) / var.sqrt() } else { 0.0 };
    let normal = Normal::standard();
    let p_value = (2.0 * normal.cdf(-z.abs())).min(1.0);
    let faster = match u.partial_cmp(&mean) {
        Some(std::cmp::Ordering::Less) => Some(Faster::A),
        Some(std::cmp::Ordering::Greater) => Some(Faster::B),
        _ => None,
    };
    Ok(MannWhitney { u, z, p_value, faster })
}

/// Writes `scheme,window_index,micros` rows for every report.
pub fn write_latency_csv<W: Write>(out: W, reports: &[LatencyReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "window_index", "micros"])?;
    for r in reports {
        for (i, us) in r.latencies_us.iter().enumerate() {
            w.serialize((&r.scheme, i, us))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AutoencoderSpec, ClassifierSpec};

    #[test]
    fn counts_match_hand_formulas() {
        assert_eq!(mac_count(&[Layer::Dense { inp: 26, out: 12 }], 33).unwrap(), 10_296);
        assert_eq!(mac_count(&[Layer::Lstm { inp: 52, hidden: 26 }], 33).unwrap(), 267_696);
        assert_eq!(mac_count(&[], 33).unwrap(), 0);
        assert!(matches!(
            mac_count(&[Layer::Other("attention".into())], 33),
            Err(BenchError::UnsupportedLayer(_))
        ));
    }

    #[test]
    fn timing_report_shape() {
        let p = Pipeline {
            name: "SEMI".into(),
            encoder: Some(Autoencoder::build(AutoencoderSpec::new(AeVariant::Lstm, 9, 5), 0).unwrap()),
            classifier: Classifier::build(ClassifierSpec::softmax(5, 3), 0).unwrap(),
        };
        let test = Tensor::zeros(&[100, 9]);
        let r = time_pipeline(&p, &test, DEFAULT_WINDOW, 2).unwrap();
        assert_eq!(r.latencies_us.len(), 3);
        assert_eq!(r.macs_per_window, 33 * (4 * 5 * 14 + 5 * 3));
        assert!(r.min_latencies_us.iter().zip(&r.latencies_us).all(|(m, l)| m <= l));
        assert!(matches!(time_pipeline(&p, &test, 33, 0), Err(BenchError::NoRepetitions)));
        assert_eq!(BenchError::NoRepetitions.to_string(), "need ≥1 repetition");
        assert!(matches!(
            time_pipeline(&p, &Tensor::zeros(&[10, 9]), 33, 1),
            Err(BenchError::ShortTest { .. })
        ));
    }

    #[test]
    fn mann_whitney_extremes() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let same = mann_whitney(&a, &a).unwrap();
        assert!(same.p_value > 0.99);
        assert_eq!(same.faster, None);
        let b: Vec<f64> = (100..130).map(f64::from).collect();
        let r = mann_whitney(&a, &b).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.p_value < 1e-3);
        assert_eq!(r.faster, Some(Faster::A));
        assert!(matches!(mann_whitney(&a[..5], &b), Err(BenchError::TooFewWindows { .. })));
    }
}
