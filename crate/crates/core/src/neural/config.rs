use serde::{Deserialize, Serialize};

use super::NeuralError;
use crate::textproc::{MIN_SEQUENCE_LEN, RESERVED};

// Bounds that keep artifact loading from allocating absurd amounts.
const MAX_D_MODEL: usize = 1024;
const MAX_LAYERS: usize = 64;
const MAX_D_FF: usize = 16384;
const MAX_SEQUENCE_LEN: usize = 8192;
const MAX_VOCAB: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over positions with mask 1.
    #[default]
    Mean,
    /// The first position (BOS).
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_len: 512,
            dropout: 0.1,
            pooling: Pooling::Mean,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: String| Err(NeuralError::InvalidConfig(m));
        if self.d_model == 0 || self.d_model > MAX_D_MODEL {
            return bad(format!("d_model must be in 1..={MAX_D_MODEL}, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.n_layers > MAX_LAYERS {
            return bad(format!("n_layers must be in 1..={MAX_LAYERS}, got {}", self.n_layers));
        }
        if self.d_ff == 0 || self.d_ff > MAX_D_FF {
            return bad(format!("d_ff must be in 1..={MAX_D_FF}, got {}", self.d_ff));
        }
        if self.max_len < MIN_SEQUENCE_LEN || self.max_len > MAX_SEQUENCE_LEN {
            return bad(format!(
                "max_len must be in {MIN_SEQUENCE_LEN}..={MAX_SEQUENCE_LEN}, got {}",
                self.max_len
            ));
        }
        if self.vocab_size < RESERVED.len() || self.vocab_size > MAX_VOCAB {
            return bad(format!(
                "vocab_size must be in {}..={MAX_VOCAB}, got {}",
                RESERVED.len(),
                self.vocab_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 3,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: Some(1.0),
            seed: 0,
            early_stopping_patience: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: String| Err(NeuralError::InvalidParameter(m));
        // Zero is accepted as a null update.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 50,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_len: 12,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn heads_must_divide_width() {
        assert!(tiny().validate().is_ok());
        let cfg = ModelConfig { n_heads: 3, ..tiny() };
        assert!(matches!(cfg.validate(), Err(NeuralError::InvalidConfig(_))));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(ModelConfig { max_len: 7, ..tiny() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..tiny() }.validate().is_err());
        assert!(ModelConfig { vocab_size: 4, ..tiny() }.validate().is_err());
        assert!(TrainingConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"vocab_size": 100, "pooling": "first"}"#).unwrap();
        assert_eq!(cfg.d_model, 64);
        assert_eq!(cfg.pooling, Pooling::First);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
