use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification summary. `precision[j]` is `None` when class `j` was never predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<Option<f64>>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn compute(predictions: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != truth.len() {
            return Err(Error::config("prediction and label counts differ"));
        }
        if predictions.is_empty() {
            return Err(Error::Usage("no samples to score".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in predictions.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(Error::config(format!("class index out of range for {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|j| confusion[j][j]).sum();
        let precision = (0..classes)
            .map(|j| {
                let predicted: usize = confusion.iter().map(|row| row[j]).sum();
                precision(confusion[j][j], predicted - confusion[j][j])
            })
            .collect();
        Ok(Self {
            accuracy: correct as f64 / predictions.len() as f64,
            precision,
            confusion,
        })
    }

    /// Mean precision over classes for which it is defined.
    pub fn precision_macro(&self) -> Option<f64> {
        let defined: Vec<f64> = self.precision.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn accuracy(tp: usize, tn: usize, fp: usize, fn_: usize) -> Option<f64> {
    let total = tp + tn + fp + fn_;
    (total > 0).then(|| (tp + tn) as f64 / total as f64)
}

/// `TP / (TP + FP)`, undefined when nothing was predicted positive.
pub fn precision(tp: usize, fp: usize) -> Option<f64> {
    (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64)
}

/// Formats an optional metric, printing `n/a` when undefined.
pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}
