//! Synthetic corpora whose labels are known by construction.
//!
//! * Marker corpus: a call is NotCoachable for a question exactly when its
//!   transcript contains the marker phrase of the question's type.
//! * Query-dependent corpus: every transcript carries the markers of two of
//!   four types and is graded on one present and one absent type, so the
//!   transcript alone says nothing about the label.
//! * Late-marker corpus: the label is decided by a closing phrase that only
//!   appears after more than 256 filler tokens.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ingest_transcript, Corpus, CorpusError, Label, QuestionSpec, QuestionType, Redactor, ScorecardGrade, Speaker,
    TranscriptRecord, Utterance,
};

const FILLER: &[&str] = &[
    "order", "delivery", "package", "weather", "yesterday", "account", "billing", "statement", "invoice", "shipping",
    "address", "street", "city", "morning", "afternoon", "evening", "week", "month", "payment", "card", "balance",
    "refund", "return", "store", "online", "website", "login", "password", "email", "phone", "plan", "upgrade",
    "service", "internet", "router", "modem", "signal", "slow", "fast", "working", "broken", "replace", "warranty",
    "item", "product", "color", "size", "price", "discount", "coupon", "code", "number", "reference", "ticket",
    "issue", "problem", "question", "check", "moment", "system", "update", "screen", "device", "app", "settings",
    "restart", "cable", "box", "charge", "fee", "late", "early", "schedule", "appointment", "technician",
    "visit", "tomorrow", "today", "okay", "sure", "right", "yes", "no", "maybe", "think", "know", "see", "look",
    "find", "wait", "okay", "alright", "so", "and", "then", "but", "also", "just", "the", "a", "it", "that", "this",
    "we", "they", "was", "were", "have", "had", "will", "can", "could", "would", "should", "on", "in", "at", "for",
    "with", "from", "about",
];

/// Marker phrases for the first eight question types, sharing no words with
/// each other or with the filler.
pub const MARKERS: [(QuestionType, &str); 8] = [
    (QuestionType::Greeting, "my name is"),
    (QuestionType::Closing, "anything else whatsoever"),
    (QuestionType::AccountVerification, "verify security pin"),
    (QuestionType::Behavioral, "gladly happy assist"),
    (QuestionType::AddressingCustomer, "dear valued member"),
    (QuestionType::ProvidingCompleteInformation, "detailed explanation provided"),
    (QuestionType::CustomerIdentification, "confirm birthdate please"),
    (QuestionType::CustomerSatisfaction, "rate survey satisfied"),
];

const QUESTION_TEXTS: [[&str; 2]; 8] = [
    ["Did the agent greet the customer?", "Did the agent introduce themselves?"],
    ["Did the agent close the call properly?", "Did the agent offer further help before ending?"],
    ["Did the agent verify the account?", "Did the agent complete security verification?"],
    ["Was the agent courteous throughout?", "Did the agent show a positive attitude?"],
    ["Did the agent address the customer politely?", "Did the agent use a respectful salutation?"],
    ["Did the agent give complete information?", "Did the agent explain every step?"],
    ["Did the agent identify the caller?", "Did the agent confirm the caller identity?"],
    ["Did the agent check customer satisfaction?", "Did the agent invite feedback?"],
];

const LATE_MARKERS: [(Label, &str); 2] = [
    (Label::NotCoachable, "wonderful resolution achieved goodbye"),
    (Label::Coachable, "unresolved escalation abandoned hangup"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Marker,
    QueryDependent,
    LateMarker,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marker" => Ok(SynthKind::Marker),
            "query-dependent" | "query_dependent" => Ok(SynthKind::QueryDependent),
            "late-marker" | "late_marker" => Ok(SynthKind::LateMarker),
            other => Err(format!("unknown synthetic corpus kind {other:?}")),
        }
    }
}

/// Generates a corpus with approximately `n_pairs` labelled pairs.
pub fn generate(kind: SynthKind, n_pairs: usize, seed: u64) -> Corpus {
    match kind {
        SynthKind::Marker => marker_corpus(n_pairs, 8, seed),
        SynthKind::QueryDependent => query_dependent_corpus(n_pairs.div_ceil(2), seed),
        SynthKind::LateMarker => late_marker_corpus(n_pairs, seed),
    }
}

fn questions_for(types: usize) -> Vec<QuestionSpec> {
    let mut out = Vec::new();
    for (t, ((ty, _), texts)) in MARKERS.iter().zip(QUESTION_TEXTS).take(types).enumerate() {
        for (k, text) in texts.iter().enumerate() {
            out.push(QuestionSpec {
                question_id: format!("q{:02}", t * 2 + k + 1),
                text: text.to_string(),
                question_type: *ty,
                whitelisted: true,
            });
        }
    }
    out
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| *FILLER.choose(rng).expect("non-empty filler")).collect()
}

/// Splits tokens into alternating agent and customer utterances.
fn utterances(rng: &mut ChaCha8Rng, tokens: &[&str]) -> Vec<Utterance> {
    let mut out = Vec::new();
    let mut rest = tokens;
    let mut speaker = Speaker::Agent;
    while !rest.is_empty() {
        let take = rng.gen_range(6..=14).min(rest.len());
        out.push(Utterance {
            speaker,
            text: rest[..take].join(" "),
        });
        rest = &rest[take..];
        speaker = match speaker {
            Speaker::Agent => Speaker::Customer,
            Speaker::Customer => Speaker::Agent,
        };
    }
    out
}

/// Filler of length `len` with each phrase inserted whole at a random
/// boundary, phrases never overlapping one another.
fn compose(rng: &mut ChaCha8Rng, len: usize, phrases: &[&'static str]) -> Vec<&'static str> {
    let base = filler(rng, len);
    let mut cuts: Vec<usize> = (0..phrases.len()).map(|_| rng.gen_range(0..=len)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(len + 4 * phrases.len());
    let mut prev = 0;
    for (cut, phrase) in cuts.into_iter().zip(phrases) {
        out.extend_from_slice(&base[prev..cut]);
        out.extend(phrase.split(' '));
        prev = cut;
    }
    out.extend_from_slice(&base[prev..]);
    out
}

struct Builder {
    corpus: Corpus,
    redactor: Redactor,
    next_call: usize,
}

impl Builder {
    fn new(questions: Vec<QuestionSpec>) -> Self {
        let mut corpus = Corpus::new();
        for q in questions {
            corpus.add_question(q).expect("unique synthetic question ids");
        }
        Self {
            corpus,
            redactor: Redactor::with_defaults(),
            next_call: 0,
        }
    }

    fn add_call(&mut self, rng: &mut ChaCha8Rng, tokens: &[&str]) -> Result<String, CorpusError> {
        self.next_call += 1;
        let call_id = format!("call-{:06}", self.next_call);
        let minutes = self.next_call as i64;
        let ts = chrono::DateTime::from_timestamp(1_704_067_200 + 60 * minutes, 0).expect("valid timestamp");
        let record = TranscriptRecord {
            call_id: Some(call_id.clone()),
            agent_id: Some(format!("agent-{:02}", rng.gen_range(0..20))),
            utterances: Some(utterances(rng, tokens)),
            timestamp: Some(ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        };
        self.corpus.add_transcript(ingest_transcript(record)?, &self.redactor)?;
        Ok(call_id)
    }

    fn grade(&mut self, rng: &mut ChaCha8Rng, call_id: &str, question_id: &str, label: Label) {
        let score = match label {
            Label::Coachable => rng.gen_range(0..5) as f64,
            Label::NotCoachable => rng.gen_range(5..=10) as f64,
        };
        let mut g = ScorecardGrade::new(call_id, question_id, score, 10.0).expect("valid synthetic grade");
        g.grader_id = "synth".into();
        self.corpus.add_grade(g).expect("valid synthetic grade");
    }
}

/// `n_pairs` single-question calls over the first `n_types` types, half of
/// them carrying their question's marker (NotCoachable).
pub fn marker_corpus(n_pairs: usize, n_types: usize, seed: u64) -> Corpus {
    let n_types = n_types.clamp(1, MARKERS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let questions = questions_for(n_types);
    let mut b = Builder::new(questions.clone());
    for i in 0..n_pairs {
        let q = &questions[i % questions.len()];
        let t = q.question_type;
        let label = if (i / questions.len()) % 2 == 0 { Label::NotCoachable } else { Label::Coachable };
        let len = rng.gen_range(30..=50);
        let marker = MARKERS.iter().find(|(ty, _)| *ty == t).expect("typed marker").1;
        let phrases: &[&str] = if label == Label::NotCoachable { &[marker] } else { &[] };
        let tokens = compose(&mut rng, len, phrases);
        let call = b.add_call(&mut rng, &tokens).expect("synthetic call is valid");
        b.grade(&mut rng, &call, &q.question_id, label);
    }
    b.corpus
}

/// `n_calls` calls over four types, each graded twice with opposite labels.
pub fn query_dependent_corpus(n_calls: usize, seed: u64) -> Corpus {
    const TYPES: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let questions = questions_for(TYPES);
    let mut b = Builder::new(questions.clone());
    for _ in 0..n_calls {
        let mut types: Vec<usize> = (0..TYPES).collect();
        types.shuffle(&mut rng);
        let (present, absent) = types.split_at(2);
        let len = rng.gen_range(20..=30);
        let tokens = compose(&mut rng, len, &[MARKERS[present[0]].1, MARKERS[present[1]].1]);
        let call = b.add_call(&mut rng, &tokens).expect("synthetic call is valid");
        let pick = |rng: &mut ChaCha8Rng, t: usize| questions[t * 2 + rng.gen_range(0..2)].question_id.clone();
        let tp = present[rng.gen_range(0..2)];
        let qp = pick(&mut rng, tp);
        let ta = absent[rng.gen_range(0..2)];
        let qa = pick(&mut rng, ta);
        b.grade(&mut rng, &call, &qp, Label::NotCoachable);
        b.grade(&mut rng, &call, &qa, Label::Coachable);
    }
    b.corpus
}

/// Number of filler tokens before the closing segment.
pub const LATE_MARKER_OFFSET: std::ops::RangeInclusive<usize> = 270..=300;

/// `n_calls` closing-question calls whose label is only visible in a closing
/// segment that starts after every position a 256-token window can reach.
pub fn late_marker_corpus(n_calls: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let questions: Vec<QuestionSpec> = questions_for(2).into_iter().skip(2).collect();
    let mut b = Builder::new(questions.clone());
    for i in 0..n_calls {
        let q = &questions[i % questions.len()];
        let (label, phrase) = LATE_MARKERS[(i / questions.len()) % 2];
        let len = rng.gen_range(LATE_MARKER_OFFSET);
        let mut tokens = filler(&mut rng, len);
        tokens.extend(compose(&mut rng, 24, &[phrase; 4]));
        let call = b.add_call(&mut rng, &tokens).expect("synthetic call is valid");
        b.grade(&mut rng, &call, &q.question_id, label);
    }
    b.corpus
}
