use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{BatchItem, Decision, Policy, RecommendError, RecommendationBatch, ReviewDecision, ScoredCall};
use crate::corpus::ScorecardGrade;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchEnd {
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawnItem {
    pub call_id: String,
    pub end: BatchEnd,
}

/// One line of the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LedgerEvent {
    BatchCreated {
        seq: u64,
        batch: RecommendationBatch,
        drawn: Vec<DrawnItem>,
    },
    DecisionRecorded {
        decision: ReviewDecision,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct StoredBatch {
    batch: RecommendationBatch,
    drawn: Vec<DrawnItem>,
    created: DateTime<Utc>,
}

type DecisionKey = (String, String, String);

/// Batches handed out and decisions received. Every mutation goes through
/// [`Ledger::apply`], so replaying the event log rebuilds the same state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ledger {
    batches: BTreeMap<String, StoredBatch>,
    decisions: BTreeMap<DecisionKey, ReviewDecision>,
    next_seq: u64,
}

fn batch_id(seq: u64) -> String {
    format!("b-{seq:06}")
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, RecommendError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| RecommendError::Log(format!("bad timestamp {s:?}: {e}")))
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch(&self, id: &str) -> Option<&RecommendationBatch> {
        self.batches.get(id).map(|b| &b.batch)
    }

    pub fn batches(&self) -> impl Iterator<Item = &RecommendationBatch> {
        self.batches.values().map(|b| &b.batch)
    }

    /// Which end of the ranking each item came from. Internal only.
    pub fn drawn(&self, id: &str) -> Option<&[DrawnItem]> {
        self.batches.get(id).map(|b| b.drawn.as_slice())
    }

    pub fn decisions(&self) -> impl Iterator<Item = &ReviewDecision> {
        self.decisions.values()
    }

    pub fn decision_count(&self, batch_id: &str, manager_id: &str) -> usize {
        self.decisions
            .keys()
            .filter(|(b, _, m)| b == batch_id && m == manager_id)
            .count()
    }

    fn active(&self, now: DateTime<Utc>, policy: &Policy) -> impl Iterator<Item = &StoredBatch> {
        let window = policy.window();
        self.batches
            .values()
            .filter(move |b| b.created <= now && now < b.created + window)
    }

    /// Items per agent across batches still inside the cap window.
    pub fn active_agent_counts(&self, now: DateTime<Utc>, policy: &Policy) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for b in self.active(now, policy) {
            for item in &b.batch.items {
                *counts.entry(item.agent_id.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Chooses the next batch without changing the ledger.
    pub fn plan_batch(
        &self,
        ranked: &[ScoredCall],
        timestamps: &BTreeMap<String, String>,
        question_id: &str,
        manager_id: &str,
        policy: &Policy,
        now: DateTime<Utc>,
    ) -> Result<LedgerEvent, RecommendError> {
        policy.validate()?;
        let mut counts = self.active_agent_counts(now, policy);
        let pending: BTreeSet<&str> = self
            .active(now, policy)
            .filter(|b| b.batch.question_id == question_id)
            .flat_map(|b| b.batch.items.iter().map(|i| i.call_id.as_str()))
            .collect();
        let (n_top, n_bottom) = policy.split_counts();
        let mut chosen: BTreeSet<&str> = BTreeSet::new();
        let mut drawn = Vec::with_capacity(policy.batch_size);
        let passes: [(Box<dyn Iterator<Item = &ScoredCall>>, usize, BatchEnd); 2] = [
            (Box::new(ranked.iter()), n_top, BatchEnd::Top),
            (Box::new(ranked.iter().rev()), n_bottom, BatchEnd::Bottom),
        ];
        for (candidates, n, end) in passes {
            let mut taken = 0;
            for c in candidates {
                if taken == n {
                    break;
                }
                let count = counts.entry(c.agent_id.clone()).or_insert(0);
                if *count >= policy.per_agent_cap || pending.contains(c.call_id.as_str()) {
                    continue;
                }
                if !chosen.insert(c.call_id.as_str()) {
                    continue;
                }
                *count += 1;
                taken += 1;
                drawn.push((c, end));
            }
        }
        if drawn.is_empty() {
            return Err(RecommendError::NothingEligible(question_id.to_string()));
        }
        drawn.sort_by(|a, b| a.0.call_id.cmp(&b.0.call_id));
        let items = drawn
            .iter()
            .map(|(c, _)| BatchItem {
                call_id: c.call_id.clone(),
                agent_id: c.agent_id.clone(),
                timestamp: timestamps.get(&c.call_id).cloned().unwrap_or_default(),
                transcript: format!("/api/calls/{}", c.call_id),
            })
            .collect();
        let seq = self.next_seq + 1;
        Ok(LedgerEvent::BatchCreated {
            seq,
            batch: RecommendationBatch {
                batch_id: batch_id(seq),
                question_id: question_id.to_string(),
                manager_id: manager_id.to_string(),
                items,
                created_at: format_time(now),
            },
            drawn: drawn
                .into_iter()
                .map(|(c, end)| DrawnItem {
                    call_id: c.call_id.clone(),
                    end,
                })
                .collect(),
        })
    }

    /// Checks a decision without changing the ledger.
    pub fn plan_review(&self, decision: ReviewDecision) -> Result<LedgerEvent, RecommendError> {
        decision.validate()?;
        let in_batch = self
            .batches
            .get(&decision.batch_id)
            .is_some_and(|b| b.batch.items.iter().any(|i| i.call_id == decision.call_id));
        if !in_batch {
            return Err(RecommendError::UnknownBatchItem {
                batch_id: decision.batch_id,
                call_id: decision.call_id,
            });
        }
        let key = (
            decision.batch_id.clone(),
            decision.call_id.clone(),
            decision.manager_id.clone(),
        );
        if self.decisions.contains_key(&key) {
            return Err(RecommendError::DuplicateDecision {
                batch_id: key.0,
                call_id: key.1,
                manager_id: key.2,
            });
        }
        Ok(LedgerEvent::DecisionRecorded { decision })
    }

    pub fn apply(&mut self, event: &LedgerEvent) -> Result<(), RecommendError> {
        match event {
            LedgerEvent::BatchCreated { seq, batch, drawn } => {
                if batch.batch_id != batch_id(*seq) || self.batches.contains_key(&batch.batch_id) {
                    return Err(RecommendError::Log(format!("inconsistent batch {}", batch.batch_id)));
                }
                let created = parse_time(&batch.created_at)?;
                self.next_seq = self.next_seq.max(*seq);
                self.batches.insert(
                    batch.batch_id.clone(),
                    StoredBatch {
                        batch: batch.clone(),
                        drawn: drawn.clone(),
                        created,
                    },
                );
            }
            LedgerEvent::DecisionRecorded { decision } => {
                let LedgerEvent::DecisionRecorded { decision } = self.plan_review(decision.clone())? else {
                    unreachable!("plan_review yields a decision event");
                };
                self.decisions.insert(
                    (
                        decision.batch_id.clone(),
                        decision.call_id.clone(),
                        decision.manager_id.clone(),
                    ),
                    decision,
                );
            }
        }
        Ok(())
    }

    pub fn build_batch(
        &mut self,
        ranked: &[ScoredCall],
        timestamps: &BTreeMap<String, String>,
        question_id: &str,
        manager_id: &str,
        policy: &Policy,
        now: DateTime<Utc>,
    ) -> Result<RecommendationBatch, RecommendError> {
        let event = self.plan_batch(ranked, timestamps, question_id, manager_id, policy, now)?;
        self.apply(&event)?;
        match event {
            LedgerEvent::BatchCreated { batch, .. } => Ok(batch),
            LedgerEvent::DecisionRecorded { .. } => unreachable!("plan_batch yields a batch event"),
        }
    }

    pub fn record_review(&mut self, decision: ReviewDecision) -> Result<&ReviewDecision, RecommendError> {
        let event = self.plan_review(decision)?;
        self.apply(&event)?;
        let LedgerEvent::DecisionRecorded { decision } = event else {
            unreachable!("plan_review yields a decision event");
        };
        Ok(&self.decisions[&(decision.batch_id, decision.call_id, decision.manager_id)])
    }

    /// The decision as a scorecard grade: Positive is full marks.
    pub fn feedback_grade(&self, decision: &ReviewDecision) -> Option<ScorecardGrade> {
        let batch = self.batch(&decision.batch_id)?;
        let score = match decision.decision {
            Decision::Positive => 1.0,
            Decision::Negative => 0.0,
        };
        let mut g = ScorecardGrade::new(&decision.call_id, &batch.question_id, score, 1.0).ok()?;
        g.grader_id = decision.manager_id.clone();
        g.graded_at = Some(decision.decided_at.clone());
        Some(g)
    }
}

/// Rebuilds a ledger from JSONL events.
pub fn replay<R: BufRead>(reader: R) -> Result<Ledger, RecommendError> {
    let mut ledger = Ledger::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RecommendError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: LedgerEvent =
            serde_json::from_str(&line).map_err(|e| RecommendError::Log(format!("line {}: {e}", i + 1)))?;
        ledger.apply(&event)?;
    }
    Ok(ledger)
}

/// Durable append-only event file.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens or creates the log and replays it. A trailing line without a
    /// newline is an interrupted write and is cut off.
    pub fn open(path: &Path) -> Result<(EventLog, Ledger), RecommendError> {
        let io = |e: std::io::Error| RecommendError::Log(format!("{}: {e}", path.display()));
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        let bytes = std::fs::read(path).map_err(io)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            file.set_len(complete as u64).map_err(io)?;
        }
        let ledger = replay(BufReader::new(&bytes[..complete]))?;
        Ok((
            EventLog {
                path: path.to_path_buf(),
                file,
            },
            ledger,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &LedgerEvent) -> Result<(), RecommendError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let io = |e: std::io::Error| RecommendError::Log(format!("{}: {e}", self.path.display()));
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommend::hidden_keys;

    fn ranked(n: usize, agents: usize) -> Vec<ScoredCall> {
        (0..n)
            .map(|i| ScoredCall {
                call_id: format!("c{i:03}"),
                agent_id: format!("a{}", i % agents),
                coachable_probability: 1.0 - i as f64 / n as f64,
            })
            .collect()
    }

    fn t0() -> DateTime<Utc> {
        "2024-03-01T09:00:00Z".parse().unwrap()
    }

    fn build(l: &mut Ledger, r: &[ScoredCall], p: &Policy, now: DateTime<Utc>) -> Result<RecommendationBatch, RecommendError> {
        l.build_batch(r, &BTreeMap::new(), "q1", "m1", p, now)
    }

    #[test]
    fn three_from_each_end() {
        let mut l = Ledger::new();
        let r = ranked(20, 20);
        let b = build(&mut l, &r, &Policy::default(), t0()).unwrap();
        assert_eq!(b.batch_id, "b-000001");
        let ids: Vec<_> = b.items.iter().map(|i| i.call_id.as_str()).collect();
        assert_eq!(ids, ["c000", "c001", "c002", "c017", "c018", "c019"]);
        let drawn = l.drawn("b-000001").unwrap();
        assert_eq!(drawn.iter().filter(|d| d.end == BatchEnd::Top).count(), 3);
        assert!(hidden_keys(&serde_json::to_value(&b).unwrap()).is_empty());
        assert_eq!(b.items[0].transcript, "/api/calls/c000");
    }

    #[test]
    fn capped_agent_skipped() {
        let mut l = Ledger::new();
        let p = Policy { per_agent_cap: 5, batch_size: 5, positive_fraction: 0.0, ..Policy::default() };
        let mut r = ranked(10, 1);
        build(&mut l, &r, &p, t0()).unwrap();
        r.push(ScoredCall { call_id: "z".into(), agent_id: "b".into(), coachable_probability: 0.0 });
        let b = l.build_batch(&r, &BTreeMap::new(), "q2", "m1", &p, t0()).unwrap();
        assert_eq!(b.items.len(), 1);
        assert_eq!(b.items[0].agent_id, "b");
        let err = l.build_batch(&r[..10], &BTreeMap::new(), "q3", "m1", &p, t0()).unwrap_err();
        assert!(matches!(err, RecommendError::NothingEligible(_)));
        // The window frees the cap again.
        let later = t0() + chrono::Duration::days(7);
        assert_eq!(l.build_batch(&r[..10], &BTreeMap::new(), "q3", "m1", &p, later).unwrap().items.len(), 5);
    }

    #[test]
    fn pending_calls_not_repeated_for_same_question() {
        let mut l = Ledger::new();
        let p = Policy { per_agent_cap: 100, ..Policy::default() };
        let r = ranked(8, 2);
        let a = build(&mut l, &r, &p, t0()).unwrap();
        let b = build(&mut l, &r, &p, t0()).unwrap();
        let a_ids: BTreeSet<_> = a.items.iter().map(|i| &i.call_id).collect();
        assert!(b.items.iter().all(|i| !a_ids.contains(&i.call_id)));
        assert_eq!(b.items.len(), 2);
    }

    #[test]
    fn fraction_extremes() {
        let r = ranked(20, 20);
        let p0 = Policy { positive_fraction: 0.0, ..Policy::default() };
        let b = build(&mut Ledger::new(), &r, &p0, t0()).unwrap();
        assert!(b.items.iter().all(|i| i.call_id.as_str() < "c006"));
        let p1 = Policy { positive_fraction: 1.0, ..Policy::default() };
        let b = build(&mut Ledger::new(), &r, &p1, t0()).unwrap();
        assert!(b.items.iter().all(|i| i.call_id.as_str() >= "c014"));
    }

    fn decision(batch: &str, call: &str) -> ReviewDecision {
        ReviewDecision {
            batch_id: batch.into(),
            call_id: call.into(),
            manager_id: "m1".into(),
            decision: Decision::Negative,
            rubric_score: None,
            comment: Some("missed greeting".into()),
            decided_at: "2024-03-01T10:00:00Z".into(),
        }
    }

    #[test]
    fn review_rules() {
        let mut l = Ledger::new();
        let b = build(&mut l, &ranked(10, 10), &Policy::default(), t0()).unwrap();
        let call = b.items[0].call_id.clone();
        assert_eq!(l.decision_count(&b.batch_id, "m1"), 0);
        l.record_review(decision(&b.batch_id, &call)).unwrap();
        assert_eq!(l.decision_count(&b.batch_id, "m1"), 1);
        assert!(matches!(
            l.record_review(decision(&b.batch_id, &call)),
            Err(RecommendError::DuplicateDecision { .. })
        ));
        assert!(matches!(
            l.record_review(decision(&b.batch_id, "nope")),
            Err(RecommendError::UnknownBatchItem { .. })
        ));
        assert!(matches!(
            l.record_review(decision("b-999999", &call)),
            Err(RecommendError::UnknownBatchItem { .. })
        ));
        let g = l.feedback_grade(&decision(&b.batch_id, &call)).unwrap();
        assert_eq!((g.score, g.max_score, g.question_id.as_str()), (0.0, 1.0, "q1"));
    }

    #[test]
    fn log_replay_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (mut log, mut l) = EventLog::open(&path).unwrap();
        let r = ranked(12, 4);
        for k in 0..3 {
            let e = l
                .plan_batch(&r, &BTreeMap::new(), &format!("q{k}"), "m1", &Policy::default(), t0())
                .unwrap();
            log.append(&e).unwrap();
            l.apply(&e).unwrap();
        }
        let e = l.plan_review(decision("b-000002", &l.batch("b-000002").unwrap().items[1].call_id.clone())).unwrap();
        log.append(&e).unwrap();
        l.apply(&e).unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"batch_cr").unwrap();
        drop(f);
        let (_, back) = EventLog::open(&path).unwrap();
        assert_eq!(back, l);
        assert!(std::fs::read_to_string(&path).unwrap().ends_with('\n'));
    }
}
