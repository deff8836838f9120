//! Guard-railed call recommendations for managers and the review ledger.
//!
//! Scores never leave this module: served batches carry only call and agent
//! ids plus a pointer to the transcript.

mod ledger;
mod schema;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuestionSpec, Transcript};
use crate::pipeline::{PipelineError, TrainedModel};

pub use ledger::{format_time, replay, BatchEnd, DrawnItem, EventLog, Ledger, LedgerEvent};
pub use schema::{hidden_keys, HIDDEN_KEYS};

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("question {0} is not on the whitelist")]
    QuestionNotAllowed(String),
    #[error("no eligible calls for question {0}")]
    NothingEligible(String),
    #[error("call {call_id} is not an item of batch {batch_id}")]
    UnknownBatchItem { batch_id: String, call_id: String },
    #[error("manager {manager_id} already decided on call {call_id} in batch {batch_id}")]
    DuplicateDecision {
        batch_id: String,
        call_id: String,
        manager_id: String,
    },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error(transparent)]
    Scoring(#[from] PipelineError),
    #[error("event log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Policy {
    /// Items per agent across unexpired batches.
    pub per_agent_cap: u32,
    /// Lifetime of a batch for cap accounting.
    pub window_days: u32,
    pub batch_size: usize,
    /// Share of each batch drawn from the likely-not-coachable end.
    pub positive_fraction: f64,
    /// Allowed question ids. `None` admits every question flagged
    /// `whitelisted` in the corpus.
    pub whitelist: Option<BTreeSet<String>>,
    /// Served payloads are label-free whatever this says.
    pub hide_scores: bool,
    /// Turn review decisions into scorecard grades for retraining.
    pub feed_reviews: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            per_agent_cap: 5,
            window_days: 7,
            batch_size: 6,
            positive_fraction: 0.5,
            whitelist: None,
            hide_scores: true,
            feed_reviews: false,
        }
    }
}

impl Policy {
    pub fn validate(&self) -> Result<(), RecommendError> {
        let bad = |m: &str| Err(RecommendError::InvalidPolicy(m.to_string()));
        if self.per_agent_cap == 0 {
            return bad("per_agent_cap must be at least 1");
        }
        if self.window_days == 0 {
            return bad("window_days must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("positive_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn allows(&self, question: &QuestionSpec) -> bool {
        question.whitelisted
            && self
                .whitelist
                .as_ref()
                .map_or(true, |w| w.contains(&question.question_id))
    }

    /// Items taken from the top (likely coachable) and bottom of the ranking.
    pub fn split_counts(&self) -> (usize, usize) {
        let top = (self.batch_size as f64 * (1.0 - self.positive_fraction)).round() as usize;
        let top = top.min(self.batch_size);
        (top, self.batch_size - top)
    }

    pub fn window(&self) -> chrono::Duration {
        chrono::Duration::days(i64::from(self.window_days))
    }
}

/// Internal ranking entry; never serialized to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCall {
    pub call_id: String,
    pub agent_id: String,
    pub coachable_probability: f64,
}

/// Anything that can estimate how likely a call needs coaching.
pub trait CallScorer {
    fn coachable_probability(&self, question: &QuestionSpec, transcript: &Transcript) -> Result<f64, PipelineError>;
}

impl CallScorer for TrainedModel {
    fn coachable_probability(&self, question: &QuestionSpec, transcript: &Transcript) -> Result<f64, PipelineError> {
        Ok(self.predict(question, transcript)?.score)
    }
}

/// Ranks calls by descending coachable probability, ties by call id.
pub fn score_calls<'a, S, I>(
    scorer: &S,
    question: &QuestionSpec,
    calls: I,
    policy: &Policy,
) -> Result<Vec<ScoredCall>, RecommendError>
where
    S: CallScorer + ?Sized,
    I: IntoIterator<Item = &'a Transcript>,
{
    if !policy.allows(question) {
        return Err(RecommendError::QuestionNotAllowed(question.question_id.clone()));
    }
    let mut ranked = calls
        .into_iter()
        .map(|t| {
            Ok(ScoredCall {
                call_id: t.call_id.clone(),
                agent_id: t.agent_id.clone(),
                coachable_probability: scorer.coachable_probability(question, t)?,
            })
        })
        .collect::<Result<Vec<_>, RecommendError>>()?;
    ranked.sort_by(|a, b| {
        b.coachable_probability
            .total_cmp(&a.coachable_probability)
            .then_with(|| a.call_id.cmp(&b.call_id))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchItem {
    pub call_id: String,
    pub agent_id: String,
    pub timestamp: String,
    /// Where the client fetches the redacted transcript.
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationBatch {
    pub batch_id: String,
    pub question_id: String,
    pub manager_id: String,
    pub items: Vec<BatchItem>,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    /// A good call: not coachable.
    #[serde(alias = "positive")]
    Positive,
    /// A call that needs coaching.
    #[serde(alias = "negative")]
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewDecision {
    pub batch_id: String,
    pub call_id: String,
    pub manager_id: String,
    pub decision: Decision,
    #[serde(default)]
    pub rubric_score: Option<f64>,
    #[serde(default)]
    pub comment: Option<String>,
    pub decided_at: String,
}

impl ReviewDecision {
    pub fn validate(&self) -> Result<(), RecommendError> {
        let bad = |m: String| Err(RecommendError::InvalidDecision(m));
        for (name, v) in [("batch_id", &self.batch_id), ("call_id", &self.call_id), ("manager_id", &self.manager_id)] {
            if v.trim().is_empty() {
                return bad(format!("{name} is empty"));
            }
        }
        if let Some(s) = self.rubric_score {
            if !s.is_finite() || !(0.0..=100.0).contains(&s) {
                return bad(format!("rubric_score must lie in [0, 100], got {s}"));
            }
        }
        if chrono::DateTime::parse_from_rfc3339(&self.decided_at).is_err() {
            return bad(format!("decided_at {:?} is not an RFC 3339 timestamp", self.decided_at));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{QuestionType, Speaker, Utterance};
    use std::collections::BTreeMap;

    struct Fixed(BTreeMap<String, f64>);

    impl CallScorer for Fixed {
        fn coachable_probability(&self, _: &QuestionSpec, t: &Transcript) -> Result<f64, PipelineError> {
            Ok(self.0[&t.call_id])
        }
    }

    fn call(id: &str) -> Transcript {
        Transcript {
            call_id: id.into(),
            agent_id: "a".into(),
            utterances: vec![Utterance {
                speaker: Speaker::Agent,
                text: "hello".into(),
            }],
            timestamp: "2024-01-01T00:00:00Z".into(),
            word_count: 1,
        }
    }

    fn question(whitelisted: bool) -> QuestionSpec {
        QuestionSpec {
            question_id: "q".into(),
            text: "did the agent greet".into(),
            question_type: QuestionType::Greeting,
            whitelisted,
        }
    }

    #[test]
    fn ranking_descends_with_id_ties() {
        let calls: Vec<_> = ["c1", "c2", "c3", "c4"].into_iter().map(call).collect();
        let probs = [("c1", 0.9), ("c2", 0.4), ("c3", 0.7), ("c4", 0.4)];
        let s = Fixed(probs.iter().map(|(k, v)| (k.to_string(), *v)).collect());
        let ranked = score_calls(&s, &question(true), &calls, &Policy::default()).unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.call_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c3", "c2", "c4"]);
    }

    #[test]
    fn whitelist_enforced() {
        let s = Fixed(BTreeMap::new());
        let err = score_calls(&s, &question(false), &[], &Policy::default()).unwrap_err();
        assert!(matches!(err, RecommendError::QuestionNotAllowed(_)));
        let p = Policy {
            whitelist: Some(BTreeSet::from(["other".to_string()])),
            ..Policy::default()
        };
        assert!(!p.allows(&question(true)));
    }

    #[test]
    fn mix_arithmetic() {
        let p = Policy::default();
        assert_eq!(p.split_counts(), (3, 3));
        assert_eq!(Policy { positive_fraction: 0.0, ..p.clone() }.split_counts(), (6, 0));
        assert_eq!(Policy { positive_fraction: 1.0, ..p.clone() }.split_counts(), (0, 6));
        assert_eq!(Policy { batch_size: 5, ..p.clone() }.split_counts(), (3, 2));
        assert!(Policy { per_agent_cap: 0, ..p.clone() }.validate().is_err());
        assert!(Policy { positive_fraction: 1.5, ..p }.validate().is_err());
    }

    #[test]
    fn decision_validation() {
        let d = ReviewDecision {
            batch_id: "b".into(),
            call_id: "c".into(),
            manager_id: "m".into(),
            decision: Decision::Positive,
            rubric_score: Some(80.0),
            comment: None,
            decided_at: "2024-01-01T00:00:00Z".into(),
        };
        d.validate().unwrap();
        assert!(ReviewDecision { rubric_score: Some(101.0), ..d.clone() }.validate().is_err());
        assert!(ReviewDecision { decided_at: "yesterday".into(), ..d }.validate().is_err());
    }
}
