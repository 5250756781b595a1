//! Confusion matrices and (macro) F1.

use alloc::vec;
use alloc::vec::Vec;

/// Counts indexed `[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new(n_classes);
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), n_classes * n_classes);
        ConfusionMatrix { n: n_classes, counts }
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// F1 of one class; 0 when the class is absent from both truth and
    /// predictions.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.get(class, class);
        let fn_ = self.row(class).iter().sum::<u64>() - tp;
        let fp = (0..self.n).map(|t| self.get(t, class)).sum::<u64>() - tp;
        f1_from_counts(tp, fp, fn_)
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.n).map(|c| self.f1(c)).collect()
    }

    /// Unweighted mean of per-class F1 over all classes.
    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1().iter().sum::<f64>() / self.n as f64
    }
}

/// `2 tp / (2 tp + fp + fn)`, the harmonic mean of precision and recall.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}
