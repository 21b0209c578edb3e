//! Confusion counts and derived precision/recall/F1.

use serde::Serialize;

/// Harmonic mean of precision and recall; 0 when both are 0.
///
/// Works on fractions or percentages alike, since the scale cancels.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Binary classification report; positive class = stuttered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MetricsReport {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl MetricsReport {
    pub fn from_counts(true_pos: usize, false_pos: usize, false_neg: usize, true_neg: usize) -> Self {
        MetricsReport { true_pos, false_pos, false_neg, true_neg }
    }

    /// Tally one `(label, prediction)` pair.
    pub fn record(&mut self, label: u8, prediction: u8) {
        match (label, prediction) {
            (1, 1) => self.true_pos += 1,
            (0, 1) => self.false_pos += 1,
            (1, 0) => self.false_neg += 1,
            _ => self.true_neg += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// `tp / (tp + fp)`, 0 when undefined.
    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    /// `tp / (tp + fn)`, 0 when undefined.
    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_pos + self.true_neg, self.total())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
