//! Evaluation suite: accuracy, forgetting, transfer, learning-curve area,
//! and the memory/compute accountants.
//!
//! Accuracy bookkeeping revolves around two per-task snapshots: the accuracy
//! measured immediately after a task was learned, and the accuracy of the
//! same task at the end of the stream. Their gap is forgetting (negative) or
//! backward transfer (positive). Forward transfer compares the final task's
//! accuracy against a model trained on that task in isolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BYTES_PER_PARAM: u64 = 8;

/// Per-task accuracies: right after learning, and at end of stream.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub just_learned: Vec<f64>,
    pub at_end: Vec<f64>,
}

impl AccuracyMatrix {
    pub fn task_count(&self) -> usize {
        self.just_learned.len()
    }

    fn check(&self) -> Result<()> {
        if self.just_learned.len() != self.at_end.len() {
            return Err(Error::Invalid(format!(
                "{} just-learned entries vs {} final entries",
                self.just_learned.len(),
                self.at_end.len()
            )));
        }
        for &a in self.just_learned.iter().chain(&self.at_end) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Invalid(format!("accuracy {a} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Mean end-of-stream accuracy over all tasks.
pub fn avg_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    m.check()?;
    if m.at_end.is_empty() {
        return Err(Error::Invalid("no tasks to average".into()));
    }
    Ok(m.at_end.iter().sum::<f64>() / m.at_end.len() as f64)
}

/// Mean accuracy change on every task except the last: negative values are
/// forgetting, positive values backward transfer. Undefined for fewer than
/// two tasks (the 1/(T−1) normalizer vanishes).
pub fn forgetting(m: &AccuracyMatrix) -> Result<f64> {
    m.check()?;
    let t = m.task_count();
    if t < 2 {
        return Err(Error::Invalid(format!("forgetting undefined for {t} task(s)")));
    }
    let sum: f64 =
        (0..t - 1).map(|i| m.at_end[i] - m.just_learned[i]).sum();
    Ok(sum / (t - 1) as f64)
}

/// Final-task accuracy after the whole stream minus the accuracy of an
/// identically configured model trained on that task alone.
pub fn transfer(stream_last_acc: f64, isolated_last_acc: f64) -> f64 {
    stream_last_acc - isolated_last_acc
}

/// Mean accuracy over the first `beta`+1 points of a learning curve
/// (batch 0 = the untrained predictor).
pub fn lca(curve: &[f64], beta: usize) -> Result<f64> {
    if curve.len() < beta + 1 {
        return Err(Error::Invalid(format!(
            "learning curve has {} points, need {}",
            curve.len(),
            beta + 1
        )));
    }
    Ok(curve[..=beta].iter().sum::<f64>() / (beta + 1) as f64)
}

/// [`lca`] averaged over tasks.
pub fn lca_mean(curves: &[Vec<f64>], beta: usize) -> Result<f64> {
    if curves.is_empty() {
        return Err(Error::Invalid("no learning curves".into()));
    }
    let mut sum = 0.0;
    for c in curves {
        sum += lca(c, beta)?;
    }
    Ok(sum / curves.len() as f64)
}

/// What a counted chunk of work was.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Forward,
    Backward,
    AdamUpdate,
}

/// Floating-point operation count for one linear layer of shape m→n under a
/// fixed convention: forward 2·B·m·n, backward 4·B·m·n (input and parameter
/// gradients), optimizer update 10 per parameter (batch-independent).
pub fn account_flops(m: usize, n: usize, batch: usize, phase: Phase) -> u64 {
    let (m, n, b) = (m as u64, n as u64, batch as u64);
    match phase {
        Phase::Forward => 2 * b * m * n,
        Phase::Backward => 4 * b * m * n,
        Phase::AdamUpdate => 10 * (m * n + n),
    }
}

/// Everything a learner keeps around, plus accumulated training compute.
/// Byte counts are high-water marks, so all fields are monotone over a
/// stream by construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLedger {
    parameter_bytes: u64,
    auxiliary_bytes: u64,
    flops: u64,
}

impl ResourceLedger {
    pub fn new() -> ResourceLedger {
        ResourceLedger::default()
    }

    pub fn parameter_bytes(&self) -> u64 {
        self.parameter_bytes
    }

    pub fn auxiliary_bytes(&self) -> u64 {
        self.auxiliary_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.parameter_bytes + self.auxiliary_bytes
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn add_flops(&mut self, n: u64) {
        self.flops += n;
    }

    /// Record the live parameter footprint (bytes). Never decreases.
    pub fn record_parameter_bytes(&mut self, bytes: u64) {
        self.parameter_bytes = self.parameter_bytes.max(bytes);
    }

    pub fn record_parameters(&mut self, count: usize) {
        self.record_parameter_bytes(count as u64 * BYTES_PER_PARAM);
    }

    /// Record the auxiliary state footprint (bytes). Never decreases.
    pub fn record_auxiliary_bytes(&mut self, bytes: u64) {
        self.auxiliary_bytes = self.auxiliary_bytes.max(bytes);
    }
}
