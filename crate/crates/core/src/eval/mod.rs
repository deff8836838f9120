//! Binary and macro metrics, per-question-type breakdowns, report rendering
//! and the ablation harness.

mod ablation;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabeledPair, QuestionSpec, QuestionType};
use crate::dataset::render_table;

pub use ablation::{ablation_run, render_ablation_table, AblationCell, AblationRow};
pub use metrics::{confusion, f1_score, macro_metrics, metrics, round2, ConfusionMatrix, Metrics};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("question {0} has no known question type")]
    UnknownQuestionType(String),
    #[error("ablation grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub count: u64,
    pub correct: u64,
    pub accuracy: f64,
}

/// Accuracy per question type. Types with no pairs are omitted.
pub fn per_type_report(
    predictions: &[Label],
    gold: &[LabeledPair],
    questions: &BTreeMap<String, QuestionSpec>,
) -> Result<BTreeMap<QuestionType, TypeAccuracy>, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut tally: BTreeMap<QuestionType, (u64, u64)> = BTreeMap::new();
    for (p, g) in predictions.iter().zip(gold) {
        let ty = questions
            .get(&g.question_id)
            .map(|q| q.question_type)
            .ok_or_else(|| EvalError::UnknownQuestionType(g.question_id.clone()))?;
        let e = tally.entry(ty).or_default();
        e.0 += 1;
        e.1 += u64::from(*p == g.label);
    }
    Ok(tally
        .into_iter()
        .map(|(ty, (count, correct))| {
            let accuracy = round2(100.0 * correct as f64 / count as f64);
            (ty, TypeAccuracy { count, correct, accuracy })
        })
        .collect())
}

/// Wall-clock measurements, kept apart from the metrics so that reports can
/// be compared across runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub p50_scoring_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub positive_class: Label,
    pub samples: u64,
    pub confusion: ConfusionMatrix,
    /// Binary metrics with `Coachable` positive, percent, two decimals.
    pub metrics: Metrics,
    pub macro_metrics: Metrics,
    pub per_type: BTreeMap<QuestionType, TypeAccuracy>,
    pub config: serde_json::Value,
    pub timing: Timing,
}

impl EvalReport {
    pub fn build(
        model_id: &str,
        predictions: &[Label],
        gold: &[LabeledPair],
        questions: &BTreeMap<String, QuestionSpec>,
        config: serde_json::Value,
        timing: Timing,
    ) -> Result<EvalReport, EvalError> {
        let gold_labels: Vec<Label> = gold.iter().map(|p| p.label).collect();
        let cm = confusion(predictions, &gold_labels)?;
        Ok(EvalReport {
            model_id: model_id.to_string(),
            positive_class: Label::Coachable,
            samples: cm.total(),
            confusion: cm,
            metrics: metrics(&cm).rounded(),
            macro_metrics: macro_metrics(&cm).rounded(),
            per_type: per_type_report(predictions, gold, questions)?,
            config,
            timing,
        })
    }

    /// The report with timing zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            timing: Timing::default(),
            ..self.clone()
        }
    }
}

pub fn render_metrics_table(reports: &[EvalReport]) -> String {
    let headers = ["Model", "Precision", "Recall", "F1", "Accuracy", "Macro F1"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.model_id.clone(),
                format!("{:.2}", r.metrics.precision),
                format!("{:.2}", r.metrics.recall),
                format!("{:.2}", r.metrics.f1),
                format!("{:.2}", r.metrics.accuracy),
                format!("{:.2}", r.macro_metrics.f1),
            ]
        })
        .collect();
    let mut out = String::from("positive class: Coachable\n");
    out.push_str(&render_table(&headers, &rows));
    out
}

pub fn render_per_type_table(report: &EvalReport) -> String {
    let headers = ["Question Type", "Samples", "Accuracy"];
    let rows: Vec<[String; 3]> = report
        .per_type
        .iter()
        .map(|(ty, a)| [ty.name().to_string(), a.count.to_string(), format!("{:.2}", a.accuracy)])
        .collect();
    render_table(&headers, &rows)
}

pub fn per_type_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model_id,question_type,samples,correct,accuracy\n");
    for r in reports {
        for (ty, a) in &r.per_type {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.2}",
                csv_field(&r.model_id),
                csv_field(ty.name()),
                a.count,
                a.correct,
                a.accuracy
            );
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
