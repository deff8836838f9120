//! Classical classifiers over TF-IDF features: multinomial Naive Bayes, a
//! linear SVM, CART decision trees and random forests.

mod naive_bayes;
mod svm;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::textproc::SparseVec;

pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};
pub use svm::{hinge_objective, train_linear_svm, train_linear_svm_traced, LinearSvmModel, SvmTrace};
pub use tree::{
    train_decision_tree, train_random_forest, DecisionTreeModel, ForestParams, RandomForestModel,
    TreeNode, TreeParams,
};
pub(crate) use tree::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("training data contains a single class")]
    SingleClassTraining,
    #[error("training data is empty")]
    EmptyTraining,
    #[error("feature dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed model: {0}")]
    Format(String),
}

/// A predicted label with a score in `[0, 1]` that increases with the
/// likelihood of `Coachable`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

impl Prediction {
    pub(crate) fn from_score(score: f64, coachable: bool) -> Self {
        Self {
            label: if coachable { Label::Coachable } else { Label::NotCoachable },
            score,
        }
    }
}

/// Validates a training set and returns its feature dimension.
pub(crate) fn check_training(x: &[SparseVec], y: &[Label]) -> Result<usize, BaselineError> {
    if x.is_empty() {
        return Err(BaselineError::EmptyTraining);
    }
    if x.len() != y.len() {
        return Err(BaselineError::InvalidParameter(format!(
            "{} feature rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].dim;
    if let Some(bad) = x.iter().find(|v| v.dim != dim || v.max_index().map_or(false, |m| m as usize >= dim)) {
        return Err(BaselineError::DimensionMismatch {
            expected: dim,
            got: bad.dim,
        });
    }
    let coachable = y.iter().filter(|&&l| l == Label::Coachable).count();
    if coachable == 0 || coachable == y.len() {
        return Err(BaselineError::SingleClassTraining);
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    NaiveBayes,
    LinearSvm,
    DecisionTree,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BaselineModel {
    NaiveBayes(NaiveBayesModel),
    LinearSvm(LinearSvmModel),
    DecisionTree(DecisionTreeModel),
    RandomForest(RandomForestModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub nb_alpha: f64,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub forest_n_trees: usize,
    /// `None` means `sqrt(dim) / dim`.
    pub forest_feature_frac: Option<f64>,
    pub forest_bootstrap: bool,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            nb_alpha: 1.0,
            svm_lambda: 1e-4,
            svm_epochs: 20,
            tree_max_depth: 20,
            tree_min_leaf: 2,
            forest_n_trees: 100,
            forest_feature_frac: None,
            forest_bootstrap: true,
            seed: 0,
        }
    }
}

pub fn train_baseline(
    variant: BaselineVariant,
    x: &[SparseVec],
    y: &[Label],
    cfg: &BaselineConfig,
) -> Result<BaselineModel, BaselineError> {
    Ok(match variant {
        BaselineVariant::NaiveBayes => BaselineModel::NaiveBayes(train_naive_bayes(x, y, cfg.nb_alpha)?),
        BaselineVariant::LinearSvm => {
            BaselineModel::LinearSvm(train_linear_svm(x, y, cfg.svm_lambda, cfg.svm_epochs, cfg.seed)?)
        }
        BaselineVariant::DecisionTree => BaselineModel::DecisionTree(train_decision_tree(
            x,
            y,
            cfg.tree_max_depth,
            cfg.tree_min_leaf,
        )?),
        BaselineVariant::RandomForest => BaselineModel::RandomForest(train_random_forest(
            x,
            y,
            &ForestParams {
                n_trees: cfg.forest_n_trees,
                max_depth: cfg.tree_max_depth,
                min_leaf: cfg.tree_min_leaf,
                feature_frac: cfg.forest_feature_frac,
                bootstrap: cfg.forest_bootstrap,
                seed: cfg.seed,
            },
        )?),
    })
}

impl BaselineModel {
    pub fn variant(&self) -> BaselineVariant {
        match self {
            BaselineModel::NaiveBayes(_) => BaselineVariant::NaiveBayes,
            BaselineModel::LinearSvm(_) => BaselineVariant::LinearSvm,
            BaselineModel::DecisionTree(_) => BaselineVariant::DecisionTree,
            BaselineModel::RandomForest(_) => BaselineVariant::RandomForest,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaselineModel::NaiveBayes(m) => m.dim,
            BaselineModel::LinearSvm(m) => m.dim(),
            BaselineModel::DecisionTree(m) => m.dim,
            BaselineModel::RandomForest(m) => m.dim,
        }
    }

    pub fn predict(&self, x: &SparseVec) -> Result<Prediction, BaselineError> {
        let dim = self.dim();
        if x.dim != dim || x.max_index().map_or(false, |m| m as usize >= dim) {
            return Err(BaselineError::DimensionMismatch {
                expected: dim,
                got: x.dim,
            });
        }
        Ok(match self {
            BaselineModel::NaiveBayes(m) => m.predict(x),
            BaselineModel::LinearSvm(m) => m.predict(x),
            BaselineModel::DecisionTree(m) => m.predict(x),
            BaselineModel::RandomForest(m) => m.predict(x),
        })
    }

    /// Structural checks applied to deserialized models.
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: String| Err(BaselineError::Format(m));
        match self {
            BaselineModel::NaiveBayes(m) => {
                if m.log_likelihoods.iter().any(|l| l.len() != m.dim) {
                    return bad("likelihood table does not match dim".into());
                }
                let prior_sum = m.log_priors[0].exp() + m.log_priors[1].exp();
                if (prior_sum - 1.0).abs() > 1e-9 {
                    return bad(format!("class priors sum to {prior_sum}"));
                }
            }
            BaselineModel::LinearSvm(m) => {
                if m.weights.iter().chain([&m.bias]).any(|w| !w.is_finite()) {
                    return bad("non-finite weight".into());
                }
            }
            BaselineModel::DecisionTree(t) => t.validate().map_err(BaselineError::Format)?,
            BaselineModel::RandomForest(f) => {
                if f.trees.is_empty() {
                    return bad("forest has no trees".into());
                }
                for t in &f.trees {
                    if t.dim != f.dim {
                        return bad("tree dimension differs from forest".into());
                    }
                    t.validate().map_err(BaselineError::Format)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_checks_dimension() {
        let m = BaselineModel::LinearSvm(LinearSvmModel { weights: vec![0.0; 3], bias: 0.0 });
        assert!(matches!(
            m.predict(&SparseVec::new(4)),
            Err(BaselineError::DimensionMismatch { expected: 3, got: 4 })
        ));
        assert!(m.predict(&SparseVec::new(3)).is_ok());
    }

    #[test]
    fn model_json_carries_variant_tag() {
        let m = BaselineModel::LinearSvm(LinearSvmModel { weights: vec![1.0], bias: 0.5 });
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["variant"], "linear_svm");
        let back: BaselineModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }
}
