use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesDataset};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Number of contiguous divisions the training stream is cut into.
pub const DIVISIONS: usize = 100;

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Representation size `round(r_f · N^f)`, at least 1.
pub fn repr_dim(num_features: usize, compression_ratio: f64) -> Result<usize, DataError> {
    if !(compression_ratio > 0.0 && compression_ratio < 1.0) {
        return Err(DataError::Ratio {
            name: "compression_ratio",
            value: compression_ratio,
            range: "(0, 1)",
        });
    }
    Ok(round_half_up(compression_ratio * num_features as f64).max(1))
}

/// `DIVISIONS` contiguous ranges covering `0..n`; the last absorbs the remainder.
pub fn division_ranges(n: usize) -> Vec<Range<usize>> {
    let size = n / DIVISIONS;
    (0..DIVISIONS)
        .map(|i| {
            let end = if i + 1 == DIVISIONS { n } else { (i + 1) * size };
            i * size..end
        })
        .collect()
}

/// Sorted indices of the divisions kept for the server.
pub fn selected_divisions(label_ratio: f64, seed: u64) -> Result<Vec<usize>, DataError> {
    if !(label_ratio > 0.0 && label_ratio <= 1.0) {
        return Err(DataError::Ratio {
            name: "label_ratio",
            value: label_ratio,
            range: "(0, 1]",
        });
    }
    let count = round_half_up(DIVISIONS as f64 * label_ratio).clamp(1, DIVISIONS);
    let mut rng = stream(seed, Purpose::LabeledSubset, 0, 0);
    let mut picked = index::sample(&mut rng, DIVISIONS, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// The server's labelled set: a random subset of divisions in temporal order.
pub fn sample_labeled_subset(
    train: &TimeSeriesDataset,
    label_ratio: f64,
    seed: u64,
) -> Result<TimeSeriesDataset, DataError> {
    let picked = selected_divisions(label_ratio, seed)?;
    if train.len() < DIVISIONS {
        return Err(DataError::TooShort {
            what: "labelled subset",
            need: DIVISIONS,
            have: train.len(),
        });
    }
    let divs = division_ranges(train.len());
    let ranges: Vec<Range<usize>> = picked.into_iter().map(|i| divs[i].clone()).collect();
    Ok(train.gather_ranges(&ranges))
}

/// `floor(n_o / n_p)`: the sample count of one client.
pub fn samples_per_client(n_o: usize, participants: usize) -> usize {
    n_o / participants.max(1)
}

/// Row ranges of the training stream that make up one client's data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub client_id: usize,
    pub ranges: Vec<Range<usize>>,
}

impl PartitionPlan {
    pub fn n_k(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }
}

/// Each client takes one window of `floor(n_k / 100)` rows from every division.
pub fn plan_iid(
    n_o: usize,
    num_clients: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<PartitionPlan>, DataError> {
    let n_k = samples_per_client(n_o, participants);
    if n_k < DIVISIONS {
        return Err(DataError::TooShort {
            what: "IID client share",
            need: DIVISIONS,
            have: n_k,
        });
    }
    let frag = n_k / DIVISIONS;
    let divs = division_ranges(n_o);
    Ok((0..num_clients)
        .map(|client_id| {
            let mut rng = stream(seed, Purpose::Partition, client_id as u64, 0);
            let ranges = divs
                .iter()
                .map(|d| {
                    let start = d.start + rng.random_range(0..=d.len() - frag);
                    start..start + frag
                })
                .collect();
            PartitionPlan { client_id, ranges }
        })
        .collect())
}

/// Each client takes one window of `n_k` rows at a uniformly random start.
pub fn plan_noniid(
    n_o: usize,
    num_clients: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<PartitionPlan>, DataError> {
    let n_k = samples_per_client(n_o, participants);
    if n_k == 0 || n_k > n_o {
        return Err(DataError::TooShort {
            what: "non-IID client window",
            need: participants.max(1),
            have: n_o,
        });
    }
    Ok((0..num_clients)
        .map(|client_id| {
            let mut rng = stream(seed, Purpose::Partition, client_id as u64, 0);
            let start = rng.random_range(0..=n_o - n_k);
            PartitionPlan {
                client_id,
                ranges: vec![start..start + n_k],
            }
        })
        .collect())
}

/// A client's unlabelled data. There is no label field to leak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub client_id: usize,
    /// Concatenated windows, `[n_k, N^f]`.
    pub samples: Tensor,
    /// Row count of each window in `samples`.
    pub fragments: Vec<usize>,
}

impl ClientPartition {
    pub fn n_k(&self) -> usize {
        self.samples.rows()
    }
}

/// A client's data with labels kept, for the fully supervised scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClientPartition {
    pub client_id: usize,
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub fragments: Vec<usize>,
}

impl LabeledClientPartition {
    pub fn n_k(&self) -> usize {
        self.labels.len()
    }
}

fn materialize(train: &TimeSeriesDataset, plan: &PartitionPlan) -> LabeledClientPartition {
    let part = train.gather_ranges(&plan.ranges);
    LabeledClientPartition {
        client_id: plan.client_id,
        samples: part.features,
        labels: part.labels,
        fragments: plan.ranges.iter().map(|r| r.len()).collect(),
    }
}

fn strip(p: LabeledClientPartition) -> ClientPartition {
    ClientPartition {
        client_id: p.client_id,
        samples: p.samples,
        fragments: p.fragments,
    }
}

pub fn partition_iid_labeled(
    train: &TimeSeriesDataset,
    num_clients: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<LabeledClientPartition>, DataError> {
    Ok(plan_iid(train.len(), num_clients, participants, seed)?
        .iter()
        .map(|p| materialize(train, p))
        .collect())
}

pub fn partition_noniid_labeled(
    train: &TimeSeriesDataset,
    num_clients: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<LabeledClientPartition>, DataError> {
    Ok(plan_noniid(train.len(), num_clients, participants, seed)?
        .iter()
        .map(|p| materialize(train, p))
        .collect())
}

pub fn partition_iid(
    train: &TimeSeriesDataset,
    num_clients: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<ClientPartition>, DataError> {
    Ok(partition_iid_labeled(train, num_clients, participants, seed)?
        .into_iter()
        .map(strip)
        .collect())
}

pub fn partition_noniid(
    train: &TimeSeriesDataset,
    num_clients: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<ClientPartition>, DataError> {
    Ok(partition_noniid_labeled(train, num_clients, participants, seed)?
        .into_iter()
        .map(strip)
        .collect())
}
