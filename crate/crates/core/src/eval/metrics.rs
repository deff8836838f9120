use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;

/// Rounds half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Binary confusion counts with `Coachable` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: Label, gold: Label) {
        match (predicted, gold) {
            (Label::Coachable, Label::Coachable) => self.tp += 1,
            (Label::Coachable, Label::NotCoachable) => self.fp += 1,
            (Label::NotCoachable, Label::Coachable) => self.fn_ += 1,
            (Label::NotCoachable, Label::NotCoachable) => self.tn += 1,
        }
    }

    /// The same counts read with `NotCoachable` as the positive class.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

pub fn confusion(predictions: &[Label], gold: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        cm.record(p, g);
    }
    Ok(cm)
}

/// Percentages in `[0, 100]`, unrounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn rounded(&self) -> Metrics {
        Metrics {
            precision: round2(self.precision),
            recall: round2(self.recall),
            f1: round2(self.f1),
            accuracy: round2(self.accuracy),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; zero when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    Metrics {
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        f1: 100.0 * f1_score(precision, recall),
        accuracy: 100.0 * ratio(cm.tp + cm.tn, cm.total()),
    }
}

/// Unweighted mean of the per-class metrics for both classes.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Metrics {
    let pos = metrics(cm);
    let neg = metrics(&cm.swapped());
    Metrics {
        precision: (pos.precision + neg.precision) / 2.0,
        recall: (pos.recall + neg.recall) / 2.0,
        f1: (pos.f1 + neg.f1) / 2.0,
        accuracy: pos.accuracy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Coachable as C, NotCoachable as N};

    #[test]
    fn tally() {
        let preds = [C, C, C, C, N, N, N, N, N, N];
        let gold = [C, N, C, C, C, N, N, N, C, N];
        let cm = confusion(&preds, &gold).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn), (3, 1, 2, 4));
    }

    #[test]
    fn all_correct_and_empty() {
        let labels = [C, N, N, C, C];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionMatrix::default());
        assert!(confusion(&[C], &[]).is_err());
    }

    #[test]
    fn metric_values() {
        let cm = ConfusionMatrix { tp: 3, fp: 1, fn_: 2, tn: 4 };
        let m = metrics(&cm).rounded();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (75.0, 60.0, 66.67, 70.0));
        let zero = metrics(&ConfusionMatrix { tp: 0, fp: 0, fn_: 3, tn: 2 });
        assert_eq!(zero.precision, 0.0);
        assert_eq!(zero.f1, 0.0);
    }

    #[test]
    fn published_f1_is_harmonic_mean() {
        // DialogLED: precision 67.92, recall 63.72, F1 65.76.
        let f1 = f1_score(67.92, 63.72);
        assert!((f1 - 65.76).abs() < 0.02, "{f1}");
    }

    #[test]
    fn round_half_away() {
        assert_eq!(round2(0.125), 0.13);
        assert_eq!(round2(-0.125), -0.13);
        assert_eq!(round2(200.0 / 3.0), 66.67);
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_swap(
            rows in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..50),
            rot in 0usize..50,
        ) {
            let to = |b: bool| if b { C } else { N };
            let preds: Vec<Label> = rows.iter().map(|r| to(r.0)).collect();
            let gold: Vec<Label> = rows.iter().map(|r| to(r.1)).collect();
            let cm = confusion(&preds, &gold).unwrap();
            let mut p2 = preds.clone();
            let mut g2 = gold.clone();
            if !p2.is_empty() {
                let k = rot % p2.len();
                p2.rotate_left(k);
                g2.rotate_left(k);
            }
            prop_assert_eq!(metrics(&confusion(&p2, &g2).unwrap()), metrics(&cm));
            let sw = metrics(&cm.swapped());
            prop_assert_eq!(sw.accuracy, metrics(&cm).accuracy);
            prop_assert_eq!(sw.precision, 100.0 * ratio(cm.tn, cm.tn + cm.fn_));
        }
    }
}
