use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};
use crate::baselines::derive_seed;
use crate::corpus::Corpus;
use crate::dataset::{render_table, Splits};
use crate::pipeline::{evaluate_model, train_model, ModelKind, PipelineConfig, PipelineError};

/// One grid cell. Unset overrides keep the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    #[serde(default)]
    pub label: Option<String>,
    pub model: ModelKind,
    #[serde(default)]
    pub max_len: Option<usize>,
    #[serde(default)]
    pub include_query: Option<bool>,
}

impl AblationCell {
    pub fn new(model: ModelKind) -> Self {
        Self {
            label: None,
            model,
            max_len: None,
            include_query: None,
        }
    }

    fn display_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut parts = Vec::new();
        if self.include_query == Some(false) {
            parts.push(" - without query".to_string());
        }
        if let Some(n) = self.max_len {
            parts.push(format!(" - reduced sequence length = {n}"));
        }
        if parts.is_empty() {
            "base".into()
        } else {
            parts.concat()
        }
    }

    pub fn apply(&self, base: &PipelineConfig, seed: u64) -> PipelineConfig {
        let mut cfg = base.clone().with_seed(seed);
        if let Some(q) = self.include_query {
            cfg.include_query = q;
        }
        if let Some(n) = self.max_len {
            cfg.transformer.model.max_len = n;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub cell: AblationCell,
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains and evaluates every cell on the same splits. Cell `i` uses the
/// seed `derive_seed(seed, i)`.
pub fn ablation_run(
    grid: &[AblationCell],
    base: &PipelineConfig,
    corpus: &Corpus,
    splits: &Splits,
    seed: u64,
) -> Result<Vec<AblationRow>, PipelineError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid.into());
    }
    grid.iter()
        .enumerate()
        .map(|(i, cell)| {
            let cell_seed = derive_seed(seed, i as u64);
            let cfg = cell.apply(base, cell_seed);
            let (model, _) = train_model(cell.model, corpus, splits, &cfg)?;
            let config = serde_json::to_value(&cfg).expect("config serializes");
            let label = cell.display_label();
            let report = evaluate_model(&label, &model, corpus, &splits.test, config)?;
            Ok(AblationRow {
                label,
                cell: cell.clone(),
                seed: cell_seed,
                report,
            })
        })
        .collect()
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let headers = ["Model", "Precision", "Recall", "F1", "Accuracy"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            let m = &r.report.metrics;
            [
                format!("{} {}", r.cell.model.short_name(), r.label),
                format!("{:.2}", m.precision),
                format!("{:.2}", m.recall),
                format!("{:.2}", m.f1),
                format!("{:.2}", m.accuracy),
            ]
        })
        .collect();
    render_table(&headers, &body)
}
