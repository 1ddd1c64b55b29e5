use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `confusion[i][j]` counts true class `i` predicted as `j`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub accuracy: f64,
    pub per_class: [ClassScores; NUM_CLASSES],
    /// Unweighted mean of the per-class F1 scores.
    pub macro_f1: f64,
}

impl RunMetrics {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion matrix, accuracy and per-class precision/recall/F1. A class
/// never predicted has precision 0, a class never present has recall 0, and
/// F1 is 0 whenever precision + recall is 0.
pub fn confusion_and_f1(predictions: &[usize], labels: &[usize]) -> Result<RunMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= NUM_CLASSES || l >= NUM_CLASSES {
            return Err(Error::Data(format!("class index out of range (label {l}, prediction {p})")));
        }
        confusion[l][p] += 1;
    }
    let total = labels.len();
    let correct: usize = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
    let per_class = std::array::from_fn(|k| {
        let tp = confusion[k][k];
        let predicted: usize = (0..NUM_CLASSES).map(|i| confusion[i][k]).sum();
        let actual: usize = confusion[k].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores { precision, recall, f1 }
    });
    let macro_f1 = per_class.iter().map(|c: &ClassScores| c.f1).sum::<f64>() / NUM_CLASSES as f64;
    Ok(RunMetrics {
        confusion,
        accuracy: correct as f64 / total as f64,
        per_class,
        macro_f1,
    })
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { mean, std, n }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = [0, 1, 2, 2, 1, 0];
        let m = confusion_and_f1(&l, &l).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.per_class.iter().all(|c| c.f1 == 1.0));
        assert_eq!(m.total(), 6);
    }

    #[test]
    fn everything_predicted_as_pumping() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let m = confusion_and_f1(&[2; 30], &labels).unwrap();
        assert_eq!(m.per_class[0].f1, 0.0);
        assert_eq!(m.per_class[1].f1, 0.0);
        let p = 1.0 / 3.0;
        assert!((m.per_class[2].f1 - 2.0 * p / (p + 1.0)).abs() < 1e-15);
        assert!((m.per_class[2].f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fixture_matrix() {
        let matrix = [[5, 1, 0], [2, 3, 1], [0, 0, 8]];
        let (mut pred, mut lab) = (vec![], vec![]);
        for (i, row) in matrix.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                pred.extend(std::iter::repeat_n(j, n));
                lab.extend(std::iter::repeat_n(i, n));
            }
        }
        let m = confusion_and_f1(&pred, &lab).unwrap();
        assert_eq!(m.confusion, matrix);
        assert_eq!(m.accuracy, 0.8);
        let (p, r) = (5.0 / 7.0, 5.0 / 6.0);
        assert!((m.per_class[0].f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert!((m.per_class[0].f1 - 0.769).abs() < 5e-4);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(confusion_and_f1(&[0, 1], &[0]), Err(Error::Data(_))));
        assert!(confusion_and_f1(&[3], &[0]).is_err());
    }

    #[test]
    fn summaries() {
        let s = summarize(&[0.8, 0.9]);
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.std - 0.005f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[0.7]).std, 0.0);
        assert_eq!(summarize(&[0.6; 5]).std, 0.0);
    }
}
