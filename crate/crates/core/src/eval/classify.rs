use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::scenes::SceneLabel;

const N: usize = SceneLabel::COUNT;

/// Scene confusion counts; rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..N).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let s: u64 = counts.iter().sum();
            if s > 0 {
                for (o, c) in row.iter_mut().zip(counts) {
                    *o = *c as f64 / s as f64;
                }
            }
        }
        out
    }
}

/// Tallies label indices into a confusion matrix.
pub fn confusion(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { left: truth.len(), right: predicted.len() });
    }
    let mut counts = [[0u64; N]; N];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= N || p >= N {
            return Err(EvalError::LabelOutOfRange(t.max(p)));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

pub fn confusion_labels(truth: &[SceneLabel], predicted: &[SceneLabel]) -> Result<ConfusionMatrix> {
    let t: Vec<usize> = truth.iter().map(|l| l.index()).collect();
    let p: Vec<usize> = predicted.iter().map(|l| l.index()).collect();
    confusion(&t, &p)
}
