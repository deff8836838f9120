use serde::{Deserialize, Serialize};

use super::{check_training, BaselineError, Prediction};
use crate::corpus::Label;
use crate::textproc::SparseVec;

/// Multinomial Naive Bayes over non-negative feature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub dim: usize,
    pub alpha: f64,
    /// Indexed by `Label::index()`.
    pub log_priors: [f64; 2],
    pub log_likelihoods: [Vec<f64>; 2],
}

pub fn train_naive_bayes(x: &[SparseVec], y: &[Label], alpha: f64) -> Result<NaiveBayesModel, BaselineError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(BaselineError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let dim = check_training(x, y)?;
    let mut class_counts = [0usize; 2];
    let mut feature_sums = [vec![0.0f64; dim], vec![0.0f64; dim]];
    for (xi, &yi) in x.iter().zip(y) {
        let c = yi.index();
        class_counts[c] += 1;
        for (j, v) in xi.iter() {
            if v < 0.0 {
                return Err(BaselineError::InvalidParameter(
                    "naive Bayes needs non-negative features".into(),
                ));
            }
            feature_sums[c][j as usize] += v;
        }
    }
    let n = x.len() as f64;
    let log_priors = [
        (class_counts[0] as f64 / n).ln(),
        (class_counts[1] as f64 / n).ln(),
    ];
    let log_likelihoods = feature_sums.map(|sums| {
        let total: f64 = sums.iter().sum::<f64>() + alpha * dim as f64;
        sums.iter().map(|s| ((s + alpha) / total).ln()).collect()
    });
    Ok(NaiveBayesModel {
        dim,
        alpha,
        log_priors,
        log_likelihoods,
    })
}

impl NaiveBayesModel {
    /// Class posterior in class order.
    pub fn posterior(&self, x: &SparseVec) -> [f64; 2] {
        let joint = [0, 1].map(|c| {
            self.log_priors[c]
                + x.iter()
                    .map(|(j, v)| v * self.log_likelihoods[c][j as usize])
                    .sum::<f64>()
        });
        let m = joint[0].max(joint[1]);
        let e = joint.map(|j| (j - m).exp());
        let z = e[0] + e[1];
        [e[0] / z, e[1] / z]
    }

    pub fn predict(&self, x: &SparseVec) -> Prediction {
        let p = self.posterior(x);
        Prediction::from_score(p[1], p[1] > p[0])
    }
}
