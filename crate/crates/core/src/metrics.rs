//! Confusion matrix, accuracy and macro F1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `counts[true * L + predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(classes: usize, labels: &[usize], predicted: &[usize]) -> Result<Self> {
        if labels.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} predictions",
                labels.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&y, &p) in labels.iter().zip(predicted) {
            m.add(y, p)?;
        }
        Ok(m)
    }

    /// Builds from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn add(&mut self, label: usize, predicted: usize) -> Result<()> {
        if label >= self.classes || predicted >= self.classes {
            return Err(Error::InvalidArgument(format!(
                "pair ({label}, {predicted}) outside {} classes",
                self.classes
            )));
        }
        self.counts[label * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, label: usize, predicted: usize) -> u64 {
        self.counts[label * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Samples per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.classes.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Predictions per class.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|c| (0..self.classes).map(|r| self.get(r, c)).sum())
            .collect()
    }

    /// Percentage of correct predictions; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        100.0 * trace as f64 / total as f64
    }

    /// Per-class F1 `2PR / (P + R)`, 0 when `P + R = 0`.
    pub fn f1_per_class(&self) -> Vec<f64> {
        let (rows, cols) = (self.row_sums(), self.col_sums());
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                let p = if cols[c] == 0 {
                    0.0
                } else {
                    tp / cols[c] as f64
                };
                let r = if rows[c] == 0 {
                    0.0
                } else {
                    tp / rows[c] as f64
                };
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            })
            .collect()
    }

    /// Unweighted mean of per-class F1 over all classes, as a percentage.
    pub fn macro_f1(&self) -> f64 {
        if self.classes == 0 {
            return 0.0;
        }
        100.0 * self.f1_per_class().iter().sum::<f64>() / self.classes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let m = ConfusionMatrix::from_pairs(3, &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(m.accuracy(), 100.0);
        assert_eq!(m.macro_f1(), 100.0);
    }

    #[test]
    fn binary_half() {
        let m = ConfusionMatrix::from_counts(2, vec![1, 1, 1, 1]).unwrap();
        assert_eq!(m.accuracy(), 50.0);
        assert!((m.macro_f1() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let labels: Vec<usize> = (0..21 * 10).map(|i| i % 21).collect();
        let m = ConfusionMatrix::from_pairs(21, &labels, &vec![4; labels.len()]).unwrap();
        assert!((m.accuracy() - 100.0 / 21.0).abs() < 1e-12);
        assert_eq!(m.row_sums(), vec![10; 21]);
        assert_eq!(m.col_sums()[4], 210);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(ConfusionMatrix::from_pairs(2, &[2], &[0]).is_err());
    }
}
