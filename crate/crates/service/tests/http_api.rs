mod common;

use std::sync::atomic::AtomicI64;
use std::sync::Arc;

use axum::http::StatusCode;
use coach_core::dataset::{balance_per_question, make_splits, SplitConfig};
use coach_core::pipeline::{evaluate_model, train_model, ModelKind, PipelineConfig};
use coach_core::recommend::hidden_keys;
use coach_service::http::router;
use common::*;
use serde_json::json;

const TOKEN: &str = "manager-token";

#[tokio::test]
async fn bearer_token_is_required() {
    let f = fixture(&[TOKEN]);
    let app = router(load_state(&f.config, Arc::default()));
    let (s, body) = send(&app, "GET", "/api/questions", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(body["code"], "unauthenticated");
    let (s, _) = send(&app, "GET", "/api/questions", None, Some("guess")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, body) = send(&app, "GET", "/api/questions", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = body.as_array().unwrap().iter().map(|q| q["question_id"].as_str().unwrap()).collect();
    assert!(!ids.is_empty());
    assert!(!ids.contains(&BLOCKED));
    let (s, _) = send(&app, "GET", "/healthz", None, None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn blocked_question_is_always_forbidden() {
    let f = fixture(&[]);
    let app = router(load_state(&f.config, Arc::default()));
    let req = json!({ "question_id": BLOCKED, "manager_id": "m1" });
    for _ in 0..100 {
        let (s, body) = send(&app, "POST", "/api/recommendations", Some(&req), None).await;
        assert_eq!(s, StatusCode::FORBIDDEN);
        assert_eq!(body["code"], "question_not_allowed");
    }
    let (s, body) = send(&app, "POST", "/api/recommendations", Some(&json!({ "question_id": "nope", "manager_id": "m1" })), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{body}");
}

#[tokio::test]
async fn batches_and_calls_hide_model_output() {
    let f = fixture(&[]);
    let app = router(load_state(&f.config, Arc::default()));
    for q in whitelisted_questions(&f.corpus) {
        let (s, batch) = send(&app, "POST", "/api/recommendations", Some(&json!({ "question_id": q, "manager_id": "m1" })), None).await;
        assert_eq!(s, StatusCode::CREATED, "{batch}");
        assert!(hidden_keys(&batch).is_empty(), "{batch}");
        let items = batch["items"].as_array().unwrap();
        assert!(!items.is_empty() && items.len() <= 6);
        for item in items {
            let (s, call) = send(&app, "GET", item["transcript"].as_str().unwrap(), None, None).await;
            assert_eq!(s, StatusCode::OK);
            assert!(hidden_keys(&call).is_empty(), "{call}");
            assert_eq!(call["call_id"], item["call_id"]);
        }
    }
    let (s, body) = send(&app, "GET", "/api/calls/missing", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn agent_filter_restricts_candidates() {
    let f = fixture(&[]);
    let app = router(load_state(&f.config, Arc::default()));
    let agent = f.corpus.transcripts.values().next().unwrap().agent_id.clone();
    let q = &whitelisted_questions(&f.corpus)[0];
    let (s, batch) = send(
        &app,
        "POST",
        "/api/recommendations",
        Some(&json!({ "question_id": q, "manager_id": "m1", "agent_id": agent })),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(batch["items"].as_array().unwrap().iter().all(|i| i["agent_id"] == agent.as_str()));
    let (s, body) = send(
        &app,
        "POST",
        "/api/recommendations",
        Some(&json!({ "question_id": q, "manager_id": "m1", "agent_id": "ghost" })),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["code"], "nothing_eligible");
}

#[tokio::test]
async fn reviews_are_recorded_once() {
    let f = fixture(&[]);
    let app = router(load_state(&f.config, Arc::default()));
    let q = &whitelisted_questions(&f.corpus)[0];
    let (_, batch) = send(&app, "POST", "/api/recommendations", Some(&json!({ "question_id": q, "manager_id": "m1" })), None).await;
    let call = batch["items"][0]["call_id"].as_str().unwrap();
    let review = json!({
        "batch_id": batch["batch_id"],
        "call_id": call,
        "manager_id": "m1",
        "decision": "Negative",
        "rubric_score": 40.0,
        "comment": "missed the greeting",
    });
    let (s, body) = send(&app, "POST", "/api/reviews", Some(&review), None).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    assert_eq!(body["decision"], "Negative");
    assert!(body["decided_at"].as_str().unwrap().ends_with('Z'));
    let (s, body) = send(&app, "POST", "/api/reviews", Some(&review), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["code"], "duplicate_decision");

    let mut other = review.clone();
    other["call_id"] = json!("not-in-batch");
    let (s, body) = send(&app, "POST", "/api/reviews", Some(&other), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_batch_item");

    let mut bad = review.clone();
    bad["call_id"] = batch["items"][1]["call_id"].clone();
    bad["rubric_score"] = json!(150.0);
    let (s, body) = send(&app, "POST", "/api/reviews", Some(&bad), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_decision");

    let (s, body) = send_raw(&app, "POST", "/api/reviews", b"{not json".to_vec(), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "validation");
    let (s, _) = send(&app, "POST", "/api/reviews", Some(&json!({ "batch_id": "b", "decision": "maybe" })), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn fed_back_reviews_land_in_the_corpus() {
    let mut f = fixture(&[]);
    f.config.policy.feed_reviews = true;
    let ticks = Arc::new(AtomicI64::new(0));
    let app = router(load_state(&f.config, ticks.clone()));
    let q = whitelisted_questions(&f.corpus)[0].clone();
    let (_, batch) = send(&app, "POST", "/api/recommendations", Some(&json!({ "question_id": q, "manager_id": "m1" })), None).await;
    let call = batch["items"][0]["call_id"].as_str().unwrap().to_string();
    let review = json!({ "batch_id": batch["batch_id"], "call_id": call, "manager_id": "m1", "decision": "Positive" });
    let (s, _) = send(&app, "POST", "/api/reviews", Some(&review), None).await;
    assert_eq!(s, StatusCode::CREATED);
    let reloaded = coach_service::state::load_corpus(&f.config.corpus_path, &f.config.questions_path).unwrap();
    assert_eq!(reloaded.grades.len(), f.corpus.grades.len() + 1);
    let pair = reloaded
        .labeled_pairs()
        .into_iter()
        .find(|p| p.call_id == call && p.question_id == q)
        .unwrap();
    assert_eq!(pair.label, coach_core::corpus::Label::NotCoachable);
}

#[tokio::test]
async fn report_and_reload() {
    let f = fixture(&[TOKEN]);
    let app = router(load_state(&f.config, Arc::default()));
    let (s, body) = send(&app, "GET", "/api/reports/latest", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{body}");

    let pairs = balance_per_question(&f.corpus.labeled_pairs(), 2.0, 1).unwrap();
    let splits = make_splits(&pairs, &SplitConfig { seed: 1, ..Default::default() }).unwrap();
    let (svm, _) = train_model(ModelKind::LinearSvm, &f.corpus, &splits, &PipelineConfig::default()).unwrap();
    let report = evaluate_model("svm", &svm, &f.corpus, &splits.test, json!({})).unwrap();
    std::fs::write(&f.config.report_path, serde_json::to_vec(&report).unwrap()).unwrap();
    let (s, body) = send(&app, "GET", "/api/reports/latest", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    for k in ["precision", "recall", "f1", "accuracy"] {
        assert!(body["metrics"][k].is_number(), "{k}");
    }

    svm.save(&f.config.model_path).unwrap();
    let (s, body) = send(&app, "POST", "/api/admin/reload", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["model"], "linear_svm");
    let (s, _) = send(&app, "POST", "/api/admin/reload", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
}
