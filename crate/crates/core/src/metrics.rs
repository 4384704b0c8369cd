//! Accuracy, attack success rate and simple aggregates.

use crate::gcn::PredictionMatrix;
use crate::{Error, Result};

fn check(pred: &PredictionMatrix, labels: &[usize], idx: &[usize]) -> Result<()> {
    if pred.num_nodes() != labels.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} prediction rows for {} labels",
            pred.num_nodes(),
            labels.len()
        )));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::InvalidArgument(alloc::format!("node index {bad} out of range")));
    }
    Ok(())
}

/// Fraction of `idx` whose argmax prediction equals the label.
pub fn accuracy(pred: &PredictionMatrix, labels: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyIndex);
    }
    check(pred, labels, idx)?;
    let correct = idx.iter().filter(|&&i| pred.argmax(i) == labels[i]).count();
    Ok(correct as f64 / idx.len() as f64)
}

/// Outcome counts of an attack over an index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlipCounts {
    pub total: usize,
    pub clean_correct: usize,
    /// correct before, wrong after
    pub flipped: usize,
    /// wrong before, correct after
    pub recovered: usize,
}

impl FlipCounts {
    pub fn new(clean: &PredictionMatrix, attacked: &PredictionMatrix, labels: &[usize], idx: &[usize]) -> Result<Self> {
        check(clean, labels, idx)?;
        check(attacked, labels, idx)?;
        let mut counts = FlipCounts { total: idx.len(), ..Default::default() };
        for &i in idx {
            let before = clean.argmax(i) == labels[i];
            let after = attacked.argmax(i) == labels[i];
            match (before, after) {
                (true, true) => counts.clean_correct += 1,
                (true, false) => {
                    counts.clean_correct += 1;
                    counts.flipped += 1;
                }
                (false, true) => counts.recovered += 1,
                (false, false) => {}
            }
        }
        Ok(counts)
    }

    pub fn success_rate(&self) -> f64 {
        if self.clean_correct == 0 {
            0.0
        } else {
            self.flipped as f64 / self.clean_correct as f64
        }
    }

    pub fn recovered_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.recovered as f64 / self.total as f64
        }
    }
}

/// Among `idx` nodes correct under `clean`, the fraction wrong under `attacked`.
pub fn attack_success_rate(
    clean: &PredictionMatrix,
    attacked: &PredictionMatrix,
    labels: &[usize],
    idx: &[usize],
) -> Result<f64> {
    Ok(FlipCounts::new(clean, attacked, labels, idx)?.success_rate())
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}
