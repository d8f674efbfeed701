//! Windowed test accuracy and replicate aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TimeSeriesDataset;
use crate::federation::Scheme;
use crate::models::{Autoencoder, Classifier, ModelError};
use crate::tensor::Tensor;

/// Test samples per accuracy window.
pub const DEFAULT_WINDOW: usize = 5000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set has {have} samples, fewer than one window of {window}")]
    ShortTest { window: usize, have: usize },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("no metrics to aggregate")]
    EmptyGroup,
    #[error("predictor returned {got} labels for a window of {want}")]
    PredictionCount { want: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub replicate_id: usize,
    pub scheme: Scheme,
    pub round: usize,
    pub accuracy: f64,
    pub windows_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub scheme: Scheme,
    pub round: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowedAccuracy {
    pub accuracy: f64,
    pub windows: usize,
}

/// Mean per-window accuracy of `predict` over consecutive non-overlapping
/// windows; a trailing partial window is ignored.
pub fn windowed_accuracy_with<F>(
    test: &TimeSeriesDataset,
    window: usize,
    mut predict: F,
) -> Result<WindowedAccuracy, EvalError>
where
    F: FnMut(&Tensor) -> Result<Vec<usize>, EvalError>,
{
    if window == 0 {
        return Err(EvalError::ZeroWindow);
    }
    let windows = test.len() / window;
    if windows == 0 {
        return Err(EvalError::ShortTest {
            window,
            have: test.len(),
        });
    }
    let mut sum = 0.0;
    for w in 0..windows {
        let (start, end) = (w * window, (w + 1) * window);
        let pred = predict(&test.features.slice_rows(start, end))?;
        if pred.len() != window {
            return Err(EvalError::PredictionCount {
                want: window,
                got: pred.len(),
            });
        }
        let correct = pred
            .iter()
            .zip(&test.labels[start..end])
            .filter(|(p, y)| p == y)
            .count();
        sum += correct as f64 / window as f64;
    }
    Ok(WindowedAccuracy {
        accuracy: sum / windows as f64,
        windows,
    })
}

/// Encodes each window (when an encoder is given) and classifies every step.
pub fn windowed_accuracy(
    encoder: Option<&Autoencoder>,
    classifier: &Classifier,
    test: &TimeSeriesDataset,
    window: usize,
) -> Result<WindowedAccuracy, EvalError> {
    windowed_accuracy_with(test, window, |x| {
        let pred = match encoder {
            Some(ae) => classifier.classify(&ae.encode(x)?),
            None => classifier.classify(x),
        };
        Ok(pred?)
    })
}

/// Mean and standard error (`n − 1` denominator; 0 for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One row per `(scheme, round)`, ordered by scheme then round.
pub fn aggregate_replicates(rows: &[RoundMetrics]) -> Result<Vec<AggregateMetrics>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut groups: BTreeMap<(Scheme, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scheme, r.round))
            .or_default()
            .push((r.replicate_id, r.accuracy));
    }
    Ok(groups
        .into_iter()
        .map(|((scheme, round), mut v)| {
            v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let xs: Vec<f64> = v.into_iter().map(|(_, a)| a).collect();
            let (mean, stderr) = mean_stderr(&xs);
            AggregateMetrics {
                scheme,
                round,
                mean,
                stderr,
                n: xs.len(),
            }
        })
        .collect())
}

/// Mean accuracy of the last `last` evaluations of one replicate.
pub fn converged_accuracy(rows: &[RoundMetrics], last: usize) -> Option<f64> {
    let mut sorted: Vec<&RoundMetrics> = rows.iter().collect();
    sorted.sort_by_key(|r| r.round);
    let tail = &sorted[sorted.len().saturating_sub(last)..];
    (!tail.is_empty()).then(|| tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len() as f64)
}
