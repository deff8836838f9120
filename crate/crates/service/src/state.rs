use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use coach_core::corpus::{parse_question_records, Corpus, QuestionSpec, Redactor, Transcript, Utterance};
use coach_core::eval::EvalReport;
use coach_core::pipeline::{ModelKind, TrainedModel};
use coach_core::recommend::{
    format_time, hidden_keys, score_calls, Decision, EventLog, Ledger, LedgerEvent,
    RecommendationBatch, ReviewDecision,
};
use serde::{Deserialize, Serialize};

use crate::{ServiceConfig, ServiceError};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationRequest {
    pub question_id: String,
    pub manager_id: String,
    /// Restricts candidates to one agent's calls.
    #[serde(default)]
    pub agent_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    pub batch_id: String,
    pub call_id: String,
    pub manager_id: String,
    pub decision: Decision,
    #[serde(default)]
    pub rubric_score: Option<f64>,
    #[serde(default)]
    pub comment: Option<String>,
    /// Defaults to the server clock.
    #[serde(default)]
    pub decided_at: Option<String>,
}

/// Manager-facing view of one call: the redacted transcript and nothing the
/// model said about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallView {
    pub call_id: String,
    pub agent_id: String,
    pub timestamp: String,
    pub word_count: usize,
    pub utterances: Vec<Utterance>,
}

impl From<&Transcript> for CallView {
    fn from(t: &Transcript) -> Self {
        CallView {
            call_id: t.call_id.clone(),
            agent_id: t.agent_id.clone(),
            timestamp: t.timestamp.clone(),
            word_count: t.word_count,
            utterances: t.utterances.clone(),
        }
    }
}

struct LedgerStore {
    ledger: Ledger,
    log: EventLog,
}

/// Everything a running service needs. Ledger writes are serialized by one
/// mutex; the model is swapped atomically on reload.
pub struct AppState {
    config: ServiceConfig,
    corpus: RwLock<Corpus>,
    model: RwLock<Arc<TrainedModel>>,
    ledger: Mutex<LedgerStore>,
    clock: Clock,
}

pub fn load_corpus(corpus_path: &Path, questions_path: &Path) -> Result<Corpus, ServiceError> {
    let mut corpus = Corpus::new();
    let q = std::fs::read(questions_path).map_err(|e| ServiceError::io(questions_path, e))?;
    corpus.set_questions(parse_question_records(&q)?)?;
    let f = std::fs::File::open(corpus_path).map_err(|e| ServiceError::io(corpus_path, e))?;
    corpus.read_jsonl(BufReader::new(f), &Redactor::default())?;
    Ok(corpus)
}

fn poisoned() -> ServiceError {
    ServiceError::Validation("service state lock poisoned".into())
}

impl AppState {
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let corpus = load_corpus(&config.corpus_path, &config.questions_path)?;
        let model = TrainedModel::load(&config.model_path)?;
        let (log, ledger) = EventLog::open(&config.event_log_path)?;
        Ok(Self {
            config,
            corpus: RwLock::new(corpus),
            model: RwLock::new(Arc::new(model)),
            ledger: Mutex::new(LedgerStore { ledger, log }),
            clock: Arc::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn token_allowed(&self, token: Option<&str>) -> bool {
        self.config.auth_tokens.is_empty() || token.is_some_and(|t| self.config.auth_tokens.iter().any(|a| a == t))
    }

    pub fn questions(&self) -> Result<Vec<QuestionSpec>, ServiceError> {
        let corpus = self.corpus.read().map_err(|_| poisoned())?;
        Ok(corpus
            .questions
            .values()
            .filter(|q| self.config.policy.allows(q))
            .cloned()
            .collect())
    }

    pub fn call(&self, call_id: &str) -> Result<CallView, ServiceError> {
        let corpus = self.corpus.read().map_err(|_| poisoned())?;
        corpus
            .transcripts
            .get(call_id)
            .map(CallView::from)
            .ok_or_else(|| ServiceError::NotFound(format!("call {call_id}")))
    }

    pub fn recommend(&self, req: &RecommendationRequest) -> Result<RecommendationBatch, ServiceError> {
        if req.question_id.trim().is_empty() || req.manager_id.trim().is_empty() {
            return Err(ServiceError::Validation("question_id and manager_id are required".into()));
        }
        let policy = &self.config.policy;
        let model = Arc::clone(&*self.model.read().map_err(|_| poisoned())?);
        let (ranked, timestamps) = {
            let corpus = self.corpus.read().map_err(|_| poisoned())?;
            let question = corpus
                .questions
                .get(&req.question_id)
                .ok_or_else(|| ServiceError::NotFound(format!("question {}", req.question_id)))?;
            let calls = corpus
                .transcripts
                .values()
                .filter(|t| req.agent_id.as_ref().map_or(true, |a| &t.agent_id == a));
            let ranked = score_calls(model.as_ref(), question, calls, policy)?;
            let timestamps: BTreeMap<String, String> = ranked
                .iter()
                .map(|r| (r.call_id.clone(), corpus.transcripts[&r.call_id].timestamp.clone()))
                .collect();
            (ranked, timestamps)
        };
        let mut store = self.ledger.lock().map_err(|_| poisoned())?;
        let now = (self.clock)();
        let event = store
            .ledger
            .plan_batch(&ranked, &timestamps, &req.question_id, &req.manager_id, policy, now)?;
        store.log.append(&event)?;
        store.ledger.apply(&event)?;
        let LedgerEvent::BatchCreated { batch, .. } = event else {
            unreachable!("plan_batch yields a batch event");
        };
        debug_assert!(hidden_keys(&serde_json::to_value(&batch).expect("batch serializes")).is_empty());
        Ok(batch)
    }

    pub fn review(&self, req: ReviewRequest) -> Result<ReviewDecision, ServiceError> {
        let decision = ReviewDecision {
            batch_id: req.batch_id,
            call_id: req.call_id,
            manager_id: req.manager_id,
            decision: req.decision,
            rubric_score: req.rubric_score,
            comment: req.comment,
            decided_at: req.decided_at.unwrap_or_else(|| format_time((self.clock)())),
        };
        let mut store = self.ledger.lock().map_err(|_| poisoned())?;
        let event = store.ledger.plan_review(decision.clone())?;
        store.log.append(&event)?;
        store.ledger.apply(&event)?;
        if self.config.policy.feed_reviews {
            if let Some(grade) = store.ledger.feedback_grade(&decision) {
                let path = &self.config.corpus_path;
                let mut f = OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(|e| ServiceError::io(path, e))?;
                writeln!(f, "{}", grade.to_json_line()).map_err(|e| ServiceError::io(path, e))?;
                self.corpus.write().map_err(|_| poisoned())?.add_grade(grade)?;
            }
        }
        Ok(decision)
    }

    pub fn latest_report(&self) -> Result<EvalReport, ServiceError> {
        let path = &self.config.report_path;
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::NotFound("evaluation report".into()))
            }
            Err(e) => return Err(ServiceError::io(path, e)),
        };
        serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::Validation(format!("{}: {e}", path.display())))
    }

    /// Loads the artifact again and swaps it in; requests in flight keep the
    /// model they started with.
    pub fn reload_model(&self) -> Result<ModelKind, ServiceError> {
        let model = TrainedModel::load(&self.config.model_path)?;
        let kind = model.kind();
        *self.model.write().map_err(|_| poisoned())? = Arc::new(model);
        Ok(kind)
    }

    pub fn ledger_snapshot(&self) -> Result<Ledger, ServiceError> {
        Ok(self.ledger.lock().map_err(|_| poisoned())?.ledger.clone())
    }
}
