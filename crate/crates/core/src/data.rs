//! Labeled data containers shared by the generator, the learners and the
//! metrics.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One split: a batch of row-vector inputs with integer labels.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl SplitData {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<SplitData> {
        if inputs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(SplitData { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gather a minibatch by row indices.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (self.inputs.take_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Keep only the listed rows.
    pub fn subset(&self, idx: &[usize]) -> SplitData {
        let (inputs, labels) = self.batch(idx);
        SplitData { inputs, labels }
    }
}

/// Train/validation/test triple for one task.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
    /// Number of classes (labels live in `[0, classes)`).
    pub classes: usize,
}

impl LabeledDataset {
    pub fn validate(&self) -> Result<()> {
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if let Some(&bad) = split.labels.iter().find(|&&y| y >= self.classes) {
                return Err(Error::Invalid(format!(
                    "{name} label {bad} out of range for {} classes",
                    self.classes
                )));
            }
        }
        Ok(())
    }
}
