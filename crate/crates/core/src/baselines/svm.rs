use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, BaselineError, Prediction};
use crate::corpus::Label;
use crate::textproc::SparseVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &SparseVec) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }

    /// Label by the sign of the margin, score by its logistic squash.
    pub fn predict(&self, x: &SparseVec) -> Prediction {
        let m = self.margin(x);
        Prediction::from_score(1.0 / (1.0 + (-m).exp()), m > 0.0)
    }
}

/// Regularized hinge objective `lambda/2 ||w||^2 + mean(max(0, 1 - y f(x)))`,
/// with the bias treated as the weight of a constant feature.
pub fn hinge_objective(model: &LinearSvmModel, x: &[SparseVec], y: &[Label], lambda: f64) -> f64 {
    let reg = model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - sign(yi) * model.margin(xi)).max(0.0))
        .sum();
    0.5 * lambda * reg + loss / x.len() as f64
}

fn sign(y: Label) -> f64 {
    match y {
        Label::Coachable => 1.0,
        Label::NotCoachable => -1.0,
    }
}

pub struct SvmTrace {
    pub model: LinearSvmModel,
    /// The averaged iterate at the end of every epoch.
    pub epoch_snapshots: Vec<LinearSvmModel>,
}

pub fn train_linear_svm(
    x: &[SparseVec],
    y: &[Label],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearSvmModel, BaselineError> {
    train_linear_svm_traced(x, y, lambda, epochs, seed).map(|t| t.model)
}

/// Pegasos stochastic sub-gradient descent (step `1/(lambda t)`, projection
/// onto the `1/sqrt(lambda)` ball) returning the average of all iterates.
pub fn train_linear_svm_traced(
    x: &[SparseVec],
    y: &[Label],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<SvmTrace, BaselineError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(BaselineError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if epochs == 0 {
        return Err(BaselineError::InvalidParameter("epochs must be at least 1".into()));
    }
    let dim = check_training(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Last slot is the bias.
    let mut w = vec![0.0f64; dim + 1];
    let mut sum = vec![0.0f64; dim + 1];
    let radius_sq = 1.0 / lambda;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0u64;
    let mut snapshots = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let yi = sign(y[i]);
            let margin = yi * (x[i].dot_dense(&w[..dim]) + w[dim]);
            let shrink = 1.0 - eta * lambda;
            for wj in w.iter_mut() {
                *wj *= shrink;
            }
            if margin < 1.0 {
                for (j, v) in x[i].iter() {
                    w[j as usize] += eta * yi * v;
                }
                w[dim] += eta * yi;
            }
            let norm_sq: f64 = w.iter().map(|v| v * v).sum();
            if norm_sq > radius_sq {
                let s = (radius_sq / norm_sq).sqrt();
                for wj in w.iter_mut() {
                    *wj *= s;
                }
            }
            for (s, wj) in sum.iter_mut().zip(&w) {
                *s += wj;
            }
        }
        let avg: Vec<f64> = sum.iter().map(|s| s / t as f64).collect();
        snapshots.push(LinearSvmModel {
            weights: avg[..dim].to_vec(),
            bias: avg[dim],
        });
    }
    Ok(SvmTrace {
        model: snapshots.last().cloned().expect("at least one epoch"),
        epoch_snapshots: snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Coachable as C, NotCoachable as N};

    #[test]
    fn one_dimensional_separable() {
        let x = vec![
            SparseVec::from_pairs(1, [(0, -1.0)]),
            SparseVec::from_pairs(1, [(0, 1.0)]),
        ];
        let y = vec![N, C];
        let m = train_linear_svm(&x, &y, 1e-2, 50, 3).unwrap();
        assert!(m.weights[0] > 0.0);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(m.predict(xi).label, *yi);
        }
    }

    #[test]
    fn deterministic() {
        let x: Vec<_> = (0..20)
            .map(|i| SparseVec::from_pairs(3, [((i % 3) as u32, 1.0 + i as f64 / 10.0)]))
            .collect();
        let y: Vec<_> = (0..20).map(|i| if i % 3 == 0 { C } else { N }).collect();
        let a = train_linear_svm(&x, &y, 1e-3, 5, 11).unwrap();
        let b = train_linear_svm(&x, &y, 1e-3, 5, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_scores_half() {
        let m = LinearSvmModel { weights: vec![0.0; 3], bias: 0.0 };
        let p = m.predict(&SparseVec::from_pairs(3, [(1, 0.7)]));
        assert_eq!(p.score, 0.5);
        assert_eq!(p.label, N);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![SparseVec::from_pairs(1, [(0, 1.0)])];
        assert_eq!(train_linear_svm(&x, &[C], 1e-4, 1, 0), Err(BaselineError::SingleClassTraining));
    }
}
