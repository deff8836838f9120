use serde::Serialize;

use super::{NeuralError, TransformerClassifier};
use crate::textproc::EncodedPair;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of the evaluation-mode loss (no dropout)
/// with central differences over every parameter.
pub fn grad_check(
    model: &TransformerClassifier<f64>,
    batch: &[EncodedPair],
    epsilon: f64,
) -> Result<GradCheckReport, NeuralError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(NeuralError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let (_, analytic) = model.loss_and_grad(batch, None)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_element: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for info in model.layout() {
        for e in 0..info.len() {
            let i = info.offset + e;
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + epsilon;
            let plus = probe.loss(batch)?;
            probe.params_mut()[i] = orig - epsilon;
            let minus = probe.loss(batch)?;
            probe.params_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.max_relative_error || report.worst_parameter.is_empty() {
                report.max_relative_error = rel;
                report.worst_parameter = info.name.clone();
                report.worst_element = e;
                report.analytic = analytic[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::neural::ModelConfig;
    use crate::textproc::{encode_ids, EncodeOptions};

    #[test]
    fn epsilon_must_be_positive() {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            d_ff: 4,
            max_len: 8,
            ..Default::default()
        };
        let m = TransformerClassifier::<f64>::init(cfg).unwrap();
        let p = encode_ids(&[5], &[6], &EncodeOptions { max_len: 8, ..Default::default() }, Some(Label::Coachable))
            .unwrap();
        assert!(matches!(grad_check(&m, &[p.clone()], 0.0), Err(NeuralError::InvalidParameter(_))));
        let r = grad_check(&m, &[p], 1e-5).unwrap();
        assert_eq!(r.checked, m.num_params());
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
