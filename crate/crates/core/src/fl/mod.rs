//! Federated training under synchronous and asynchronous FLchain schedules on
//! a synthetic classification task.

mod model;
mod runtime;
mod task;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::LatencyError;

pub use model::{global_aggregate, local_update, GlobalModel, Objective, SoftmaxRegression};
pub use runtime::{
    block_size, centralized_sgd, run_a_flchain, run_a_flchain_with, run_s_flchain, run_s_flchain_with, FlEnvironment,
    Trajectory,
};
pub use task::{generate_synthetic_task, Dataset, SyntheticTask, TaskSpec};

#[derive(Debug, Error, PartialEq)]
pub enum FlError {
    #[error("invalid FL config: {0}")]
    InvalidConfig(String),
    #[error("local training diverged on client {client}")]
    Diverged { client: usize },
    #[error("aggregation over zero samples")]
    NoSamples,
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error("iteration time overflowed: {0}")]
    Overflow(String),
    #[error("asynchronous schedule stalled at {0} s")]
    Stalled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FLConfig {
    /// Number of clients `K`.
    pub clients: usize,
    /// Block size as a fraction `Υ` of the clients.
    pub block_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub local_lr: f64,
    pub global_lr: f64,
    /// Stop once the training loss changes by at most this much.
    pub tolerance: f64,
    pub max_rounds: usize,
    pub iid: bool,
    pub classes_per_client: usize,
    /// Fraction of clients sampled per synchronous round.
    pub sample_fraction: f64,
    pub n_classes: usize,
    pub dim: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    pub separation: f64,
    pub cpu_per_sample: f64,
    pub clock: f64,
}

impl Default for FLConfig {
    fn default() -> Self {
        let task = TaskSpec::default();
        Self {
            clients: 10,
            block_fraction: 0.1,
            epochs: 5,
            batch_size: 20,
            local_lr: 0.01,
            global_lr: 1.0,
            tolerance: 0.0,
            max_rounds: 200,
            iid: true,
            classes_per_client: task.classes_per_client,
            sample_fraction: 1.0,
            n_classes: task.n_classes,
            dim: task.dim,
            samples_per_client: task.samples_per_client,
            test_samples: task.test_samples,
            separation: task.separation,
            cpu_per_sample: 1e4,
            clock: 1e9,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        self.check().map_err(|(key, m)| FlError::InvalidConfig(format!("{key}: {m}")))
    }

    /// Checks every field, returning the offending key and a message.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let in_unit = |key: &'static str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err((key, format!("{v} outside (0, 1]")))
            }
        };
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((key, format!("must be positive, got {v}")))
            }
        };
        let counts = [
            ("clients", self.clients),
            ("batch_size", self.batch_size),
            ("max_rounds", self.max_rounds),
            ("n_classes", self.n_classes.saturating_sub(1)),
            ("dim", self.dim),
            ("samples_per_client", self.samples_per_client),
            ("test_samples", self.test_samples),
        ];
        for (key, n) in counts {
            if n == 0 {
                return Err((key, "too small".into()));
            }
        }
        in_unit("block_fraction", self.block_fraction)?;
        in_unit("sample_fraction", self.sample_fraction)?;
        positive("local_lr", self.local_lr)?;
        positive("global_lr", self.global_lr)?;
        positive("separation", self.separation)?;
        positive("cpu_per_sample", self.cpu_per_sample)?;
        positive("clock", self.clock)?;
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(("tolerance", format!("must be non-negative, got {}", self.tolerance)));
        }
        if !self.iid && (self.classes_per_client == 0 || self.classes_per_client > self.n_classes) {
            return Err(("classes_per_client", format!("must lie in 1..={}", self.n_classes)));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            n_classes: self.n_classes,
            dim: self.dim,
            samples_per_client: self.samples_per_client,
            test_samples: self.test_samples,
            separation: self.separation,
            iid: self.iid,
            classes_per_client: self.classes_per_client,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLRoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    /// Cumulative seconds at the end of the round.
    pub wall_clock: f64,
    pub eval_accuracy: f64,
    pub eval_loss: f64,
}

/// Mean evaluation accuracy divided by the mean per-round time.
pub fn efficiency(records: &[FLRoundRecord]) -> Option<f64> {
    let last = records.last()?;
    let n = records.len() as f64;
    let accuracy = records.iter().map(|r| r.eval_accuracy).sum::<f64>() / n;
    Some(accuracy / (last.wall_clock / n))
}

pub const TRAJECTORY_HEADER: &str = "round,wall_clock_s,participants,accuracy,loss";

/// Writes records as CSV, participants joined by `;`.
pub fn write_trajectory(records: &[FLRoundRecord], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in records {
        let ids: Vec<String> = r.participants.iter().map(usize::to_string).collect();
        writeln!(out, "{},{},{},{},{}", r.round, r.wall_clock, ids.join(";"), r.eval_accuracy, r.eval_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: usize, wall_clock: f64, acc: f64) -> FLRoundRecord {
        FLRoundRecord { round, participants: vec![0, 2], wall_clock, eval_accuracy: acc, eval_loss: 0.5 }
    }

    #[test]
    fn efficiency_examples() {
        assert!((efficiency(&[rec(1, 10.0, 0.8)]).unwrap() - 0.08).abs() < 1e-15);
        let base = [rec(1, 3.0, 0.5), rec(2, 7.0, 0.7)];
        let slow = [rec(1, 6.0, 0.5), rec(2, 14.0, 0.7)];
        assert!((efficiency(&slow).unwrap() - efficiency(&base).unwrap() / 2.0).abs() < 1e-15);
        assert_eq!(efficiency(&[]), None);
    }

    #[test]
    fn trajectory_csv_layout() {
        let mut buf = Vec::new();
        write_trajectory(&[rec(1, 2.5, 0.25)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,wall_clock_s,participants,accuracy,loss\n1,2.5,0;2,0.25,0.5\n");
    }

    #[test]
    fn config_validation() {
        assert!(FLConfig::default().validate().is_ok());
        assert!(FLConfig { block_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(FLConfig { local_lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(FLConfig { tolerance: -1.0, ..Default::default() }.validate().is_err());
        assert!(FLConfig { tolerance: f64::INFINITY, ..Default::default() }.validate().is_ok());
    }
}
