#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use coach_core::corpus::{Corpus, QuestionSpec, QuestionType};
use coach_core::dataset::{balance_per_question, make_splits, SplitConfig};
use coach_core::pipeline::{train_model, ModelKind, PipelineConfig};
use coach_core::synth::marker_corpus;
use coach_service::state::Clock;
use coach_service::{AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const BLOCKED: &str = "q-blocked";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: ServiceConfig,
    pub corpus: Corpus,
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) {
    std::fs::write(dir.join("corpus.jsonl"), corpus.to_jsonl()).unwrap();
    std::fs::write(
        dir.join("questions.json"),
        serde_json::to_vec_pretty(&corpus.question_records()).unwrap(),
    )
    .unwrap();
}

/// A data directory with a marker corpus, one non-whitelisted question and
/// a Naive Bayes model at `models/current.model`.
pub fn fixture(tokens: &[&str]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = marker_corpus(240, 4, 3);
    corpus
        .add_question(QuestionSpec {
            question_id: BLOCKED.into(),
            text: "rate how friendly the agent sounded".into(),
            question_type: QuestionType::Behavioral,
            whitelisted: false,
        })
        .unwrap();
    write_corpus(dir.path(), &corpus);
    let pairs = balance_per_question(&corpus.labeled_pairs(), 2.0, 1).unwrap();
    let splits = make_splits(&pairs, &SplitConfig { seed: 1, ..Default::default() }).unwrap();
    let (model, _) = train_model(ModelKind::NaiveBayes, &corpus, &splits, &PipelineConfig::default()).unwrap();
    std::fs::create_dir_all(dir.path().join("models")).unwrap();
    model.save(&dir.path().join("models").join("current.model")).unwrap();
    let mut config = ServiceConfig::in_dir(dir.path());
    config.auth_tokens = tokens.iter().map(|t| t.to_string()).collect();
    Fixture { dir, config, corpus }
}

/// Clock advancing `step` on every read; the counter survives restarts.
pub fn stepping_clock(start: &str, step: Duration, ticks: Arc<AtomicI64>) -> Clock {
    let start: DateTime<Utc> = start.parse().unwrap();
    Arc::new(move || start + step * ticks.fetch_add(1, Ordering::SeqCst) as i32)
}

pub fn load_state(config: &ServiceConfig, ticks: Arc<AtomicI64>) -> Arc<AppState> {
    let clock = stepping_clock("2024-06-03T09:00:00Z", Duration::minutes(30), ticks);
    Arc::new(AppState::load(config.clone()).unwrap().with_clock(clock))
}

pub async fn send_raw(app: &Router, method: &str, uri: &str, body: Vec<u8>, token: Option<&str>) -> (StatusCode, Value) {
    let mut b = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    if let Some(t) = token {
        b = b.header("authorization", format!("Bearer {t}"));
    }
    let resp = app.clone().oneshot(b.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<&Value>, token: Option<&str>) -> (StatusCode, Value) {
    let bytes = body.map(|v| serde_json::to_vec(v).unwrap()).unwrap_or_default();
    send_raw(app, method, uri, bytes, token).await
}

pub fn whitelisted_questions(corpus: &Corpus) -> Vec<String> {
    corpus.questions.values().filter(|q| q.whitelisted).map(|q| q.question_id.clone()).collect()
}

pub struct SessionOutcome {
    pub responses: Vec<(StatusCode, Value)>,
    pub final_ledger: coach_core::recommend::Ledger,
    /// Restarts whose replayed ledger differed from the one before the kill.
    pub replay_mismatches: usize,
    pub restarts: usize,
}

/// Runs a seeded 200-request session of recommendations and reviews,
/// dropping and reloading the service state every `restart_every` requests.
pub async fn scripted_session(config: &ServiceConfig, restart_every: Option<usize>, seed: u64) -> SessionOutcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ticks = Arc::new(AtomicI64::new(0));
    let mut state = load_state(config, ticks.clone());
    let mut app = coach_service::http::router(state.clone());
    let corpus = coach_service::state::load_corpus(&config.corpus_path, &config.questions_path).unwrap();
    let mut questions: Vec<String> = corpus.questions.keys().cloned().collect();
    questions.sort();
    let mut batches: Vec<Value> = Vec::new();
    let mut reviews: Vec<Value> = Vec::new();
    let mut out = SessionOutcome {
        responses: Vec::new(),
        final_ledger: Default::default(),
        replay_mismatches: 0,
        restarts: 0,
    };
    for i in 0..200 {
        if restart_every.is_some_and(|n| i > 0 && i % n == 0) {
            let before = state.ledger_snapshot().unwrap();
            drop(app);
            drop(state);
            state = load_state(config, ticks.clone());
            app = coach_service::http::router(state.clone());
            out.restarts += 1;
            if state.ledger_snapshot().unwrap() != before {
                out.replay_mismatches += 1;
            }
        }
        let roll: f64 = rng.gen();
        let (uri, body) = if batches.is_empty() || roll < 0.45 {
            let q = &questions[rng.gen_range(0..questions.len())];
            let m = format!("m{}", rng.gen_range(1..=3));
            ("/api/recommendations", serde_json::json!({ "question_id": q, "manager_id": m }))
        } else if reviews.is_empty() || roll < 0.92 {
            let b = &batches[rng.gen_range(0..batches.len())];
            let items = b["items"].as_array().unwrap();
            let item = &items[rng.gen_range(0..items.len())];
            let decision = if rng.gen_bool(0.5) { "Positive" } else { "Negative" };
            let review = serde_json::json!({
                "batch_id": b["batch_id"],
                "call_id": item["call_id"],
                "manager_id": b["manager_id"],
                "decision": decision,
                "rubric_score": rng.gen_range(0..=100) as f64,
            });
            ("/api/reviews", review)
        } else {
            ("/api/reviews", reviews[rng.gen_range(0..reviews.len())].clone())
        };
        let resp = send(&app, "POST", uri, Some(&body), None).await;
        if resp.0 == StatusCode::CREATED {
            if uri == "/api/recommendations" {
                batches.push(resp.1.clone());
            } else {
                reviews.push(body);
            }
        }
        out.responses.push(resp);
    }
    out.final_ledger = state.ledger_snapshot().unwrap();
    out
}
