//! Confusion counts and the four evaluation metrics. Any 0/0 ratio is
//! defined as 0.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Classify `score >= tau` as positive and tally against the labels.
pub fn confusion_at(scores: &[f64], labels: &[u8], tau: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &y) in scores.iter().zip(labels) {
        let predicted = p >= tau;
        match (predicted, y == 1) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    let sensitivity = ratio(c.true_pos, c.true_pos + c.false_neg);
    let specificity = ratio(c.true_neg, c.true_neg + c.false_pos);
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    let accuracy = ratio(c.true_pos + c.true_neg, c.total());
    Metrics {
        f1,
        accuracy,
        sensitivity,
        specificity,
        precision,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_worked_counts() {
        let c = ConfusionCounts {
            true_pos: 2,
            false_pos: 1,
            false_neg: 1,
            true_neg: 6,
        };
        let m = compute_metrics(&c);
        assert!((m.sensitivity - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.specificity - 6.0 / 7.0).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn all_correct_is_all_ones() {
        let c = ConfusionCounts {
            true_pos: 5,
            false_pos: 0,
            false_neg: 0,
            true_neg: 5,
        };
        let m = compute_metrics(&c);
        assert_eq!(
            (m.f1, m.accuracy, m.sensitivity, m.specificity),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let c = ConfusionCounts {
            true_pos: 0,
            false_pos: 0,
            false_neg: 3,
            true_neg: 7,
        };
        let m = compute_metrics(&c);
        assert_eq!(m.sensitivity, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.specificity, 1.0);
        assert!((m.accuracy - 0.7).abs() < 1e-12);
    }

    #[test]
    fn balanced_accuracy_identity() {
        // On a balanced set, accuracy = (sensitivity + specificity) / 2.
        let scores = [0.9, 0.8, 0.3, 0.6, 0.2, 0.1, 0.55, 0.4];
        let labels = [1u8, 1, 1, 1, 0, 0, 0, 0];
        let c = confusion_at(&scores, &labels, 0.5);
        let m = compute_metrics(&c);
        assert!((m.accuracy - (m.sensitivity + m.specificity) / 2.0).abs() < 1e-12);
    }
}
