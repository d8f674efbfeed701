//! Sensor datasets: CSV ingestion, a synthetic generator, the server's
//! labelled subset and IID / non-IID client partitions.

mod csv_io;
mod partition;
mod synth;

pub use csv_io::{load_csv, load_csv_with, CsvOptions};
pub use partition::{
    partition_iid, partition_iid_labeled, partition_noniid, partition_noniid_labeled,
    division_ranges, plan_iid, plan_noniid, repr_dim, round_half_up, sample_labeled_subset, samples_per_client,
    selected_divisions, ClientPartition, LabeledClientPartition, PartitionPlan, DIVISIONS,
};
pub use synth::{synth_generate, SynthConfig};

use thiserror::Error;

use crate::tensor::Tensor;

/// Default sampling rate of the preprocessed sensor streams.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 33.0;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("no data rows")]
    NoData,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{name} = {value} is outside {range}")]
    Ratio {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("{what}: need at least {need} samples, have {have}")]
    TooShort {
        what: &'static str,
        need: usize,
        have: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Time-ordered labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    /// `[rows, features]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub sample_rate_hz: f64,
    pub participants: usize,
}

impl TimeSeriesDataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} labels for feature matrix {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "row {row}: label {l} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            participants: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Rows `start..end`, metadata preserved.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            features: self.features.slice_rows(start, end),
            labels: self.labels[start..end].to_vec(),
            ..self.meta_only()
        }
    }

    /// Concatenation of the given row ranges in the given order.
    pub fn gather_ranges(&self, ranges: &[std::ops::Range<usize>]) -> Self {
        let idx: Vec<usize> = ranges.iter().flat_map(|r| r.clone()).collect();
        Self {
            features: self.features.gather_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.meta_only()
        }
    }

    fn meta_only(&self) -> Self {
        Self {
            features: Tensor::zeros(&[0, self.num_features()]),
            labels: Vec::new(),
            num_classes: self.num_classes,
            sample_rate_hz: self.sample_rate_hz,
            participants: self.participants,
        }
    }

    /// Row count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
