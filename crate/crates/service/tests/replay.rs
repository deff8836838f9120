mod common;

use axum::http::StatusCode;
use coach_core::recommend::EventLog;
use common::*;

#[tokio::test]
async fn restarts_reconstruct_the_ledger() {
    let uninterrupted = fixture(&[]);
    let restarted = fixture(&[]);
    let a = scripted_session(&uninterrupted.config, None, 42).await;
    let b = scripted_session(&restarted.config, Some(7), 42).await;
    assert_eq!(b.restarts, 28);
    assert_eq!(b.replay_mismatches, 0);
    assert_eq!(a.responses, b.responses);
    assert_eq!(a.final_ledger, b.final_ledger);
    let statuses: std::collections::BTreeSet<u16> = a.responses.iter().map(|r| r.0.as_u16()).collect();
    assert!(statuses.contains(&StatusCode::CREATED.as_u16()));
    assert!(statuses.contains(&StatusCode::FORBIDDEN.as_u16()));
    assert!(statuses.contains(&StatusCode::CONFLICT.as_u16()));
    assert!(a.final_ledger.decisions().count() > 20);

    let log_a = std::fs::read(&uninterrupted.config.event_log_path).unwrap();
    let log_b = std::fs::read(&restarted.config.event_log_path).unwrap();
    assert_eq!(log_a, log_b);
}

#[tokio::test]
async fn torn_tail_is_discarded_on_open() {
    let f = fixture(&[]);
    let full = scripted_session(&f.config, None, 9).await;
    let mut bytes = std::fs::read(&f.config.event_log_path).unwrap();
    bytes.extend_from_slice(br#"{"event":"decision_rec"#);
    std::fs::write(&f.config.event_log_path, &bytes).unwrap();
    let (_, ledger) = EventLog::open(&f.config.event_log_path).unwrap();
    assert_eq!(ledger, full.final_ledger);
}
