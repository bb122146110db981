use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `counts[truth][predicted]`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} predictions but {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Input("cannot score an empty prediction set".into()));
        }
        let classes = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &t) in predictions.iter().zip(labels) {
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.counts.len()).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.counts.len()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::new(predictions, labels)?;
    let correct: u64 = (0..cm.counts.len()).map(|c| cm.true_positives(c)).sum();
    Ok(correct as f64 / cm.total() as f64)
}

/// F1 from true/false positive and false negative counts pooled over classes.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::new(predictions, labels)?;
    let classes = 0..cm.counts.len();
    let tp: u64 = classes.clone().map(|c| cm.true_positives(c)).sum();
    let fp: u64 = classes.clone().map(|c| cm.false_positives(c)).sum();
    let fn_: u64 = classes.map(|c| cm.false_negatives(c)).sum();
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`.
    pub points: Vec<[f64; 2]>,
    pub auc: f64,
}

/// Micro-averaged one-vs-rest ROC over every `(item, class)` score.
///
/// Equal scores form one threshold step, giving a diagonal segment.
pub fn roc_curve(scores: &Matrix<f64>, labels: &[usize]) -> Result<RocCurve> {
    let (n, classes) = scores.shape();
    if n != labels.len() {
        return Err(Error::Input(format!("{n} score rows but {} labels", labels.len())));
    }
    if classes < 2 {
        return Err(Error::Degenerate("ROC needs at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside 0..{classes}")));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Degenerate(
            "all labels belong to one class; ROC is undefined".into(),
        ));
    }
    if !scores.all_finite() {
        return Err(Error::Input("non-finite score".into()));
    }

    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n * classes);
    for (row, &label) in scores.iter_rows().zip(labels) {
        pairs.extend(row.iter().enumerate().map(|(c, &s)| (s, c == label)));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = pairs.iter().filter(|p| p.1).count() as f64;
    let negatives = pairs.len() as f64 - positives;

    let mut points = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let score = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == score {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = [fp as f64 / negatives, tp as f64 / positives];
        let prev = *points.last().expect("seeded with origin");
        auc += (next[0] - prev[0]) * (next[1] + prev[1]) / 2.0;
        points.push(next);
    }
    Ok(RocCurve { points, auc })
}
