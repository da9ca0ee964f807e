//! Per-step metric series, binning, and cross-seed aggregation.

use serde::{Deserialize, Serialize};

use super::RunError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TrainMse,
    TestAccuracy,
    Msve,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::TrainMse => "train_mse",
            MetricKind::TestAccuracy => "test_accuracy",
            MetricKind::Msve => "msve",
        })
    }
}

/// Scalar records at a fixed stride of optimizer steps.
#[derive(Clone, Debug)]
pub struct MetricsSeries {
    pub kind: MetricKind,
    /// Optimizer steps between consecutive records.
    pub stride: u64,
    pub values: Vec<f64>,
}

impl MetricsSeries {
    /// Optimizer-step index of record `i` (the step whose completion produced
    /// the record).
    pub fn step_at(&self, i: usize) -> u64 {
        (i as u64 + 1) * self.stride
    }
}

/// Means over consecutive non-overlapping windows; the final partial bin is
/// averaged over its actual length.
pub fn bin_average(values: &[f64], width: usize) -> Vec<f64> {
    assert!(width >= 1, "bin width must be positive");
    values
        .chunks(width)
        .map(|chunk| chunk.iter().sum::<f64>() / chunk.len() as f64)
        .collect()
}

/// Cross-seed mean and standard error per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateSeries {
    pub seed_count: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Aggregate already-binned per-seed series of equal length. A single seed
/// yields zero standard error by convention.
pub fn aggregate(binned: &[Vec<f64>]) -> Result<AggregateSeries, RunError> {
    if binned.is_empty() {
        return Err(RunError::Config("aggregate of zero series".into()));
    }
    let len = binned[0].len();
    for (i, s) in binned.iter().enumerate() {
        if s.len() != len {
            return Err(RunError::Config(format!(
                "ragged series: seed {} has {} bins, seed 0 has {}",
                i,
                s.len(),
                len
            )));
        }
    }
    let n = binned.len();
    let mut mean = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for b in 0..len {
        let m = binned.iter().map(|s| s[b]).sum::<f64>() / n as f64;
        mean[b] = m;
        if n > 1 {
            let var = binned.iter().map(|s| (s[b] - m) * (s[b] - m)).sum::<f64>()
                / (n as f64 - 1.0);
            stderr[b] = var.sqrt() / (n as f64).sqrt();
        }
    }
    Ok(AggregateSeries {
        seed_count: n,
        mean,
        stderr,
    })
}
