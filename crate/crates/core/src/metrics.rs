//! Confusion-matrix based segmentation metrics.
//!
//! `mAcc` averages per-class recall `p_ii / sum_j p_ij`; `mIoU` averages
//! `p_ii / (sum_j p_ij + sum_j p_ji - p_ii)`. Classes whose denominator is
//! zero contribute 0 and still count towards the mean.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::supervision::LabelMap;

/// `counts[i][j]`: pixels of true class `i` predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape(format!(
                "{classes}-class confusion matrix needs {} counts, got {}",
                classes * classes,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes]
            .iter()
            .sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    /// Adds one prediction/ground-truth pair.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        pred.check_classes(self.classes)?;
        gt.check_classes(self.classes)?;
        for (&p, &t) in pred.data().iter().zip(gt.data()) {
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Element-wise sum with another matrix of the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(format!(
                "cannot merge {}-class and {}-class confusion matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class recall; 0 for classes absent from the ground truth.
    pub fn class_accuracy(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|i| ratio(self.get(i, i), self.row_sum(i)))
            .collect()
    }

    /// Per-class intersection over union; 0 for zero denominators.
    pub fn class_iou(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|i| {
                let tp = self.get(i, i);
                ratio(tp, self.row_sum(i) + self.col_sum(i) - tp)
            })
            .collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.class_accuracy())
    }

    pub fn mean_iou(&self) -> f64 {
        mean(&self.class_iou())
    }

    /// Human-readable per-class table followed by the two means.
    pub fn report_text(&self) -> String {
        let (acc, iou) = (self.class_accuracy(), self.class_iou());
        let mut s = String::from("class      acc      iou\n");
        for k in 0..self.classes {
            writeln!(s, "{k:>5} {:>8.4} {:>8.4}", acc[k], iou[k]).unwrap();
        }
        writeln!(s, "mAcc  {:.6}", self.mean_accuracy()).unwrap();
        writeln!(s, "mIoU  {:.6}", self.mean_iou()).unwrap();
        s
    }

    /// Line-oriented `key=value` form with full precision.
    pub fn report_kv(&self) -> String {
        let (acc, iou) = (self.class_accuracy(), self.class_iou());
        let mut s = String::new();
        writeln!(s, "classes={}", self.classes).unwrap();
        writeln!(s, "pixels={}", self.total()).unwrap();
        for k in 0..self.classes {
            writeln!(s, "acc.{k}={:?}", acc[k]).unwrap();
            writeln!(s, "iou.{k}={:?}", iou[k]).unwrap();
        }
        writeln!(s, "mAcc={:?}", self.mean_accuracy()).unwrap();
        writeln!(s, "mIoU={:?}", self.mean_iou()).unwrap();
        s
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
