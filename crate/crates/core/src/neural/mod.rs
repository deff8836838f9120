//! From-scratch transformer encoder classifier for (question, transcript)
//! pairs, with training, gradient checking and a binary artifact format.

mod artifact;
mod config;
mod gradcheck;
mod model;
mod train;

use thiserror::Error;

pub use artifact::{read_model, write_model, ModelHeader, TensorEntry, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use config::{ModelConfig, Pooling, TrainingConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{
    param_count, positional_encoding, AttentionMaps, ForwardOutput, NeuralPrediction, ParamInfo, ParamKind,
    Scalar, TransformerClassifier,
};
pub use train::{evaluate_split, log_to_jsonl, train, EpochLog, TrainOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training example has no label")]
    MissingLabel,
    #[error("loss became {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64, loss: f64 },
    #[error("malformed model artifact: {0}")]
    Format(String),
}
