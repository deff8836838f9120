//! Call transcripts, QA questions, scorecard grades and the labels derived
//! from them.
//!
//! The on-disk corpus is JSON Lines: each line is either a `transcript` or a
//! `grade` record, discriminated by the `kind` field. Questions live in a
//! separate JSON array.

mod redact;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use redact::{default_patterns, redact_pii, PiiPattern, Redactor};

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("call {0} has no utterances")]
    EmptyConversation(String),
    #[error("call {call_id}: utterance {index} is empty")]
    EmptyUtterance { call_id: String, index: usize },
    #[error("invalid timestamp {0:?}")]
    InvalidTimestamp(String),
    #[error("invalid PII pattern {name}: {reason}")]
    InvalidPattern { name: String, reason: String },
    #[error("invalid grade for call {call_id}/{question_id}: {reason}")]
    InvalidGrade {
        call_id: String,
        question_id: String,
        reason: String,
    },
    #[error("unknown question type {0:?}")]
    UnknownQuestionType(String),
    #[error("duplicate call id {0}")]
    DuplicateCall(String),
    #[error("duplicate question id {0}")]
    DuplicateQuestion(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Binary coachability label. The numeric order is the model's class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    NotCoachable = 0,
    Coachable = 1,
}

impl Label {
    pub const CLASS_ORDER: [Label; 2] = [Label::NotCoachable, Label::Coachable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::CLASS_ORDER.get(i).copied()
    }

    pub fn other(self) -> Label {
        match self {
            Label::NotCoachable => Label::Coachable,
            Label::Coachable => Label::NotCoachable,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotCoachable => "NotCoachable",
            Label::Coachable => "Coachable",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    Customer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

/// One call. Utterance texts are stored post-redaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub call_id: String,
    pub agent_id: String,
    pub utterances: Vec<Utterance>,
    pub timestamp: String,
    pub word_count: usize,
}

impl Transcript {
    /// Concatenation of all utterance texts separated by single spaces.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, u) in self.utterances.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&u.text);
        }
        out
    }

    pub fn to_record(&self) -> TranscriptRecord {
        TranscriptRecord {
            call_id: Some(self.call_id.clone()),
            agent_id: Some(self.agent_id.clone()),
            utterances: Some(self.utterances.clone()),
            timestamp: Some(self.timestamp.clone()),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&CorpusRecord::Transcript(self.to_record()))
            .expect("transcript serializes")
    }

    fn apply_redaction(&mut self, redactor: &Redactor) {
        for u in &mut self.utterances {
            u.text = redactor.redact(&u.text);
        }
        self.word_count = count_words(&self.utterances);
    }
}

fn count_words(utterances: &[Utterance]) -> usize {
    utterances
        .iter()
        .map(|u| u.text.split_whitespace().count())
        .sum()
}

/// Raw transcript line as read from disk; every field is optional so that
/// validation can report exactly what is missing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterances: Option<Vec<Utterance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grader_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graded_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusRecord {
    Transcript(TranscriptRecord),
    Grade(GradeRecord),
}

fn require<T>(v: Option<T>, name: &'static str) -> Result<T, CorpusError> {
    v.ok_or(CorpusError::MissingField(name))
}

fn require_str(v: Option<String>, name: &'static str) -> Result<String, CorpusError> {
    let s = require(v, name)?;
    if s.trim().is_empty() {
        return Err(CorpusError::MissingField(name));
    }
    Ok(s)
}

fn validate_timestamp(ts: &str) -> Result<(), CorpusError> {
    if chrono::DateTime::parse_from_rfc3339(ts).is_ok()
        || chrono::NaiveDateTime::parse_from_str(ts, "%Y-%m-%dT%H:%M:%S").is_ok()
        || chrono::NaiveDate::parse_from_str(ts, "%Y-%m-%d").is_ok()
    {
        Ok(())
    } else {
        Err(CorpusError::InvalidTimestamp(ts.to_string()))
    }
}

/// Validates a raw record and computes its word count. Redaction is not applied.
pub fn ingest_transcript(record: TranscriptRecord) -> Result<Transcript, CorpusError> {
    let call_id = require_str(record.call_id, "call_id")?;
    let agent_id = require_str(record.agent_id, "agent_id")?;
    let utterances = require(record.utterances, "utterances")?;
    let timestamp = require_str(record.timestamp, "timestamp")?;
    if utterances.is_empty() {
        return Err(CorpusError::EmptyConversation(call_id));
    }
    if let Some(index) = utterances.iter().position(|u| u.text.trim().is_empty()) {
        return Err(CorpusError::EmptyUtterance { call_id, index });
    }
    validate_timestamp(&timestamp)?;
    let word_count = count_words(&utterances);
    Ok(Transcript {
        call_id,
        agent_id,
        utterances,
        timestamp,
        word_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorecardGrade {
    pub call_id: String,
    pub question_id: String,
    pub score: f64,
    pub max_score: f64,
    pub grader_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graded_at: Option<String>,
}

impl ScorecardGrade {
    pub fn new(call_id: &str, question_id: &str, score: f64, max_score: f64) -> Result<Self, CorpusError> {
        let g = Self {
            call_id: call_id.to_string(),
            question_id: question_id.to_string(),
            score,
            max_score,
            grader_id: "unknown".to_string(),
            graded_at: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidGrade {
            call_id: self.call_id.clone(),
            question_id: self.question_id.clone(),
            reason: reason.to_string(),
        };
        if !self.max_score.is_finite() || self.max_score <= 0.0 {
            return Err(bad("max_score must be positive"));
        }
        if !self.score.is_finite() || self.score < 0.0 || self.score > self.max_score {
            return Err(bad("score must lie in [0, max_score]"));
        }
        Ok(())
    }

    pub fn fraction(&self) -> f64 {
        self.score / self.max_score
    }

    pub fn to_json_line(&self) -> String {
        let rec = GradeRecord {
            call_id: Some(self.call_id.clone()),
            question_id: Some(self.question_id.clone()),
            score: Some(self.score),
            max_score: Some(self.max_score),
            grader_id: Some(self.grader_id.clone()),
            graded_at: self.graded_at.clone(),
        };
        serde_json::to_string(&CorpusRecord::Grade(rec)).expect("grade serializes")
    }
}

pub fn ingest_grade(record: GradeRecord) -> Result<ScorecardGrade, CorpusError> {
    let grade = ScorecardGrade {
        call_id: require_str(record.call_id, "call_id")?,
        question_id: require_str(record.question_id, "question_id")?,
        score: require(record.score, "score")?,
        max_score: require(record.max_score, "max_score")?,
        grader_id: require_str(record.grader_id, "grader_id")?,
        graded_at: record.graded_at,
    };
    if let Some(ts) = &grade.graded_at {
        validate_timestamp(ts)?;
    }
    grade.validate()?;
    Ok(grade)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub question_id: String,
    pub call_id: String,
    pub label: Label,
}

/// A call is coachable for a question when it scored strictly below half marks.
pub fn derive_label(grade: &ScorecardGrade) -> LabeledPair {
    let label = if grade.score / grade.max_score < 0.5 {
        Label::Coachable
    } else {
        Label::NotCoachable
    };
    LabeledPair {
        question_id: grade.question_id.clone(),
        call_id: grade.call_id.clone(),
        label,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "Account Verification")]
    AccountVerification,
    #[serde(rename = "Addressing Customer")]
    AddressingCustomer,
    #[serde(rename = "Behavioral")]
    Behavioral,
    #[serde(rename = "Closing")]
    Closing,
    #[serde(rename = "Providing Complete Information")]
    ProvidingCompleteInformation,
    #[serde(rename = "Customer Identification")]
    CustomerIdentification,
    #[serde(rename = "Customer Satisfaction")]
    CustomerSatisfaction,
    #[serde(rename = "Greeting")]
    Greeting,
    #[serde(rename = "Information Collection")]
    InformationCollection,
    #[serde(rename = "Issue Identification")]
    IssueIdentification,
    #[serde(rename = "Issue Resolution")]
    IssueResolution,
}

impl QuestionType {
    pub const ALL: [QuestionType; 11] = [
        QuestionType::AccountVerification,
        QuestionType::AddressingCustomer,
        QuestionType::Behavioral,
        QuestionType::Closing,
        QuestionType::ProvidingCompleteInformation,
        QuestionType::CustomerIdentification,
        QuestionType::CustomerSatisfaction,
        QuestionType::Greeting,
        QuestionType::InformationCollection,
        QuestionType::IssueIdentification,
        QuestionType::IssueResolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::AccountVerification => "Account Verification",
            QuestionType::AddressingCustomer => "Addressing Customer",
            QuestionType::Behavioral => "Behavioral",
            QuestionType::Closing => "Closing",
            QuestionType::ProvidingCompleteInformation => "Providing Complete Information",
            QuestionType::CustomerIdentification => "Customer Identification",
            QuestionType::CustomerSatisfaction => "Customer Satisfaction",
            QuestionType::Greeting => "Greeting",
            QuestionType::InformationCollection => "Information Collection",
            QuestionType::IssueIdentification => "Issue Identification",
            QuestionType::IssueResolution => "Issue Resolution",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuestionType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuestionType::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| CorpusError::UnknownQuestionType(s.to_string()))
    }
}

/// Question entry as stored in the question file; the type is kept as a raw
/// string so that taxonomy validation can report unknown values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub text: String,
    pub question_type: String,
    #[serde(default = "default_whitelisted")]
    pub whitelisted: bool,
}

fn default_whitelisted() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub question_id: String,
    pub text: String,
    pub question_type: QuestionType,
    pub whitelisted: bool,
}

impl TryFrom<QuestionRecord> for QuestionSpec {
    type Error = CorpusError;

    fn try_from(r: QuestionRecord) -> Result<Self, Self::Error> {
        Ok(QuestionSpec {
            question_type: r.question_type.parse()?,
            question_id: r.question_id,
            text: r.text,
            whitelisted: r.whitelisted,
        })
    }
}

impl From<&QuestionSpec> for QuestionRecord {
    fn from(q: &QuestionSpec) -> Self {
        QuestionRecord {
            question_id: q.question_id.clone(),
            text: q.text.clone(),
            question_type: q.question_type.name().to_string(),
            whitelisted: q.whitelisted,
        }
    }
}

/// Parses a question file (a JSON array of question records).
pub fn parse_question_records(bytes: &[u8]) -> Result<Vec<QuestionRecord>, CorpusError> {
    serde_json::from_slice(bytes).map_err(|e| CorpusError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownType {
    pub question_id: String,
    pub question_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub total: usize,
    pub unknown_types: Vec<UnknownType>,
    pub duplicate_ids: Vec<String>,
    /// Every known type is listed, including those with zero questions.
    pub per_type_counts: BTreeMap<QuestionType, usize>,
}

impl TaxonomyReport {
    pub fn is_valid(&self) -> bool {
        self.unknown_types.is_empty() && self.duplicate_ids.is_empty()
    }
}

pub fn validate_taxonomy(questions: &[QuestionRecord]) -> TaxonomyReport {
    let mut per_type_counts: BTreeMap<QuestionType, usize> =
        QuestionType::ALL.iter().map(|t| (*t, 0)).collect();
    let mut unknown_types = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for q in questions {
        if !seen.insert(q.question_id.as_str()) {
            duplicates.insert(q.question_id.clone());
        }
        match q.question_type.parse::<QuestionType>() {
            Ok(t) => *per_type_counts.entry(t).or_default() += 1,
            Err(_) => unknown_types.push(UnknownType {
                question_id: q.question_id.clone(),
                question_type: q.question_type.clone(),
            }),
        }
    }
    TaxonomyReport {
        total: questions.len(),
        unknown_types,
        duplicate_ids: duplicates.into_iter().collect(),
        per_type_counts,
    }
}

/// Parses one corpus line.
pub fn parse_record_line(line: &str) -> Result<CorpusRecord, CorpusError> {
    serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: 1,
        message: e.to_string(),
    })
}

/// In-memory corpus: redacted transcripts, questions and grades.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub transcripts: BTreeMap<String, Transcript>,
    pub questions: BTreeMap<String, QuestionSpec>,
    pub grades: Vec<ScorecardGrade>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ingests a transcript, redacting it before it is stored.
    pub fn add_transcript(&mut self, mut t: Transcript, redactor: &Redactor) -> Result<(), CorpusError> {
        if self.transcripts.contains_key(&t.call_id) {
            return Err(CorpusError::DuplicateCall(t.call_id));
        }
        t.apply_redaction(redactor);
        self.transcripts.insert(t.call_id.clone(), t);
        Ok(())
    }

    pub fn add_grade(&mut self, g: ScorecardGrade) -> Result<(), CorpusError> {
        g.validate()?;
        self.grades.push(g);
        Ok(())
    }

    pub fn add_question(&mut self, q: QuestionSpec) -> Result<(), CorpusError> {
        if self.questions.contains_key(&q.question_id) {
            return Err(CorpusError::DuplicateQuestion(q.question_id));
        }
        self.questions.insert(q.question_id.clone(), q);
        Ok(())
    }

    pub fn set_questions(&mut self, records: Vec<QuestionRecord>) -> Result<(), CorpusError> {
        self.questions.clear();
        for r in records {
            self.add_question(QuestionSpec::try_from(r)?)?;
        }
        Ok(())
    }

    /// Reads JSON Lines records. Blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(&mut self, reader: R, redactor: &Redactor) -> Result<(), CorpusError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_record_line(&line).map_err(|e| match e {
                CorpusError::Parse { message, .. } => CorpusError::Parse { line: i + 1, message },
                other => other,
            })?;
            match record {
                CorpusRecord::Transcript(r) => self.add_transcript(ingest_transcript(r)?, redactor)?,
                CorpusRecord::Grade(r) => self.add_grade(ingest_grade(r)?)?,
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in self.transcripts.values() {
            out.push_str(&t.to_json_line());
            out.push('\n');
        }
        for g in &self.grades {
            out.push_str(&g.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn question_records(&self) -> Vec<QuestionRecord> {
        self.questions.values().map(QuestionRecord::from).collect()
    }

    /// One labelled pair per (question, call). A regrade replaces an earlier
    /// grade when it carries a later `graded_at`, or when neither carries one
    /// and it appears later in the input.
    pub fn labeled_pairs(&self) -> Vec<LabeledPair> {
        let mut latest: BTreeMap<(&str, &str), &ScorecardGrade> = BTreeMap::new();
        for g in &self.grades {
            let key = (g.question_id.as_str(), g.call_id.as_str());
            match latest.get(&key) {
                Some(prev) if is_earlier(g, prev) => {}
                _ => {
                    latest.insert(key, g);
                }
            }
        }
        latest.values().map(|g| derive_label(g)).collect()
    }
}

fn parse_ts(ts: &str) -> Option<chrono::NaiveDateTime> {
    chrono::DateTime::parse_from_rfc3339(ts)
        .map(|d| d.naive_utc())
        .ok()
        .or_else(|| chrono::NaiveDateTime::parse_from_str(ts, "%Y-%m-%dT%H:%M:%S").ok())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(ts, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// True when `candidate` should not replace `current`.
fn is_earlier(candidate: &ScorecardGrade, current: &ScorecardGrade) -> bool {
    match (
        candidate.graded_at.as_deref().and_then(parse_ts),
        current.graded_at.as_deref().and_then(parse_ts),
    ) {
        (Some(c), Some(p)) => c < p,
        (None, Some(_)) => true,
        _ => false,
    }
}
