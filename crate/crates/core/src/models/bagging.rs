use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Random batch sizes and sequence lengths for training.
///
/// One batch is `batch_size` windows of `seq_len` consecutive rows, each
/// window starting at a uniformly random offset. An epoch keeps drawing
/// batches until the rows drawn cover the dataset length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaggingPolicy {
    pub batch_min: usize,
    pub batch_max: usize,
    pub seq_min: usize,
    pub seq_max: usize,
}

impl Default for BaggingPolicy {
    fn default() -> Self {
        Self {
            batch_min: 2,
            batch_max: 8,
            seq_min: 4,
            seq_max: 24,
        }
    }
}

/// Window starts and common length of one training batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub starts: Vec<usize>,
    pub seq_len: usize,
}

impl BatchPlan {
    /// Row indices of all windows, window-major.
    pub fn row_indices(&self) -> Vec<usize> {
        self.starts
            .iter()
            .flat_map(|&s| s..s + self.seq_len)
            .collect()
    }

    /// Row index of step `t` of every window.
    pub fn step_indices(&self, t: usize) -> Vec<usize> {
        self.starts.iter().map(|&s| s + t).collect()
    }
}

impl BaggingPolicy {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_min == 0 || self.batch_min > self.batch_max {
            return Err(ModelError::InvalidSpec(format!(
                "batch size range [{}, {}] must satisfy 1 <= min <= max",
                self.batch_min, self.batch_max
            )));
        }
        if self.seq_min == 0 || self.seq_min > self.seq_max {
            return Err(ModelError::InvalidSpec(format!(
                "sequence length range [{}, {}] must satisfy 1 <= min <= max",
                self.seq_min, self.seq_max
            )));
        }
        Ok(())
    }

    /// Draws the batches of one epoch over `n_rows` rows.
    pub fn sample_epoch<R: Rng + ?Sized>(&self, n_rows: usize, rng: &mut R) -> Vec<BatchPlan> {
        let mut plans = Vec::new();
        if n_rows == 0 {
            return plans;
        }
        let mut covered = 0;
        while covered < n_rows {
            let batch = rng.random_range(self.batch_min..=self.batch_max);
            let seq_len = rng.random_range(self.seq_min..=self.seq_max).min(n_rows);
            let starts = (0..batch)
                .map(|_| rng.random_range(0..=n_rows - seq_len))
                .collect();
            covered += batch * seq_len;
            plans.push(BatchPlan { starts, seq_len });
        }
        plans
    }
}
