//! Per-question class balancing, stratified train/validation/test splits and
//! split statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, LabeledPair};
use crate::eval::round2;
use crate::textproc::word_count;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("question {question_id}: {have} {label} pairs, need at least {need}")]
    InsufficientData {
        question_id: String,
        label: Label,
        have: usize,
        need: usize,
    },
    #[error("too few questions for held-out splits: have {have}, need {need}")]
    InsufficientQuestions { have: usize, need: usize },
    #[error("question {0}: cannot keep every split within the class-ratio cap")]
    RatioUnsatisfiable(String),
    #[error("pair ({question_id}, {call_id}) does not resolve in the corpus")]
    DanglingReference { question_id: String, call_id: String },
    #[error("malformed manifest: {0}")]
    Format(String),
}

pub const DEFAULT_MAX_RATIO: f64 = 2.0;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.10, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "valid" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(DatasetError::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub pairs: Vec<LabeledPair>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub test: DatasetSplit,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatasetSplit> {
        [&self.train, &self.validation, &self.test].into_iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub max_ratio: f64,
    pub holdout_questions: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
            max_ratio: DEFAULT_MAX_RATIO,
            holdout_questions: false,
        }
    }
}

fn check_ratio(max_ratio: f64) -> Result<(), DatasetError> {
    if !max_ratio.is_finite() || max_ratio < 1.0 {
        return Err(DatasetError::InvalidParameter(format!(
            "max_ratio must be a finite number >= 1, got {max_ratio}"
        )));
    }
    Ok(())
}

/// Largest count `k` with `k <= ratio * minority`.
fn ratio_cap(ratio: f64, minority: usize) -> usize {
    (ratio * minority as f64 + 1e-9).floor() as usize
}

struct QuestionCells<'a> {
    coachable: Vec<&'a LabeledPair>,
    not_coachable: Vec<&'a LabeledPair>,
}

fn group_by_question(pairs: &[LabeledPair]) -> BTreeMap<&str, QuestionCells<'_>> {
    let mut groups: BTreeMap<&str, QuestionCells> = BTreeMap::new();
    for p in pairs {
        let cell = groups.entry(p.question_id.as_str()).or_insert_with(|| QuestionCells {
            coachable: Vec::new(),
            not_coachable: Vec::new(),
        });
        match p.label {
            Label::Coachable => cell.coachable.push(p),
            Label::NotCoachable => cell.not_coachable.push(p),
        }
    }
    for cell in groups.values_mut() {
        cell.coachable.sort();
        cell.not_coachable.sort();
    }
    groups
}

/// Down-samples the majority class of every question so that
/// `majority <= max_ratio * minority`. Questions with a single class are dropped.
/// The output is sorted by `(question_id, call_id)`.
pub fn balance_per_question(
    pairs: &[LabeledPair],
    max_ratio: f64,
    seed: u64,
) -> Result<Vec<LabeledPair>, DatasetError> {
    check_ratio(max_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, mut cell) in group_by_question(pairs) {
        let (minority, majority) = if cell.coachable.len() <= cell.not_coachable.len() {
            (&mut cell.coachable, &mut cell.not_coachable)
        } else {
            (&mut cell.not_coachable, &mut cell.coachable)
        };
        if minority.is_empty() {
            continue;
        }
        let keep = ratio_cap(max_ratio, minority.len()).min(majority.len());
        majority.shuffle(&mut rng);
        majority.truncate(keep);
        out.extend(minority.iter().map(|p| (*p).clone()));
        out.extend(majority.iter().map(|p| (*p).clone()));
    }
    out.sort();
    Ok(out)
}

fn check_fractions(f: &[f64; 3]) -> Result<(), DatasetError> {
    if f.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(DatasetError::InvalidParameter(
            "split fractions must be positive".into(),
        ));
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidParameter(format!(
            "split fractions must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items with at least `min_each`
/// per split. Requires `n >= 3 * min_each`.
fn apportion(n: usize, fractions: &[f64; 3], min_each: usize) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = (quotas[i].floor() as usize).max(min_each);
    }
    adjust_sum(&mut counts, &quotas, n, &[min_each; 3], &[usize::MAX; 3]);
    counts
}

/// Moves `counts` toward summing to `target` within per-split bounds,
/// preferring the split furthest from its quota. Returns `false` when the
/// bounds make the target unreachable.
fn adjust_sum(counts: &mut [usize; 3], quotas: &[f64], target: usize, lo: &[usize; 3], hi: &[usize; 3]) -> bool {
    loop {
        let sum: usize = counts.iter().sum();
        if sum == target {
            return true;
        }
        let grow = sum < target;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..3 {
            let movable = if grow { counts[i] < hi[i] } else { counts[i] > lo[i] };
            if !movable {
                continue;
            }
            let gap = if grow {
                quotas[i] - counts[i] as f64
            } else {
                counts[i] as f64 - quotas[i]
            };
            if best.map_or(true, |(_, g)| gap > g + 1e-12) {
                best = Some((i, gap));
            }
        }
        match best {
            Some((i, _)) => {
                if grow {
                    counts[i] += 1;
                } else {
                    counts[i] -= 1;
                }
            }
            None => return false,
        }
    }
}

/// Partitions balanced pairs into train/validation/test.
///
/// By default every (question, label) cell is shuffled and divided across all
/// three splits, with the majority class allocated so that each split stays
/// within `max_ratio`. With `holdout_questions`, whole questions are assigned
/// to a single split instead.
pub fn make_splits(pairs: &[LabeledPair], cfg: &SplitConfig) -> Result<Splits, DatasetError> {
    check_fractions(&cfg.fractions)?;
    check_ratio(cfg.max_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buckets: [Vec<LabeledPair>; 3] = Default::default();
    let groups = group_by_question(pairs);

    if cfg.holdout_questions {
        let mut questions: Vec<&str> = groups.keys().copied().collect();
        if questions.len() < 3 {
            return Err(DatasetError::InsufficientQuestions {
                have: questions.len(),
                need: 3,
            });
        }
        questions.shuffle(&mut rng);
        let counts = apportion(questions.len(), &cfg.fractions, 1);
        let mut qi = questions.into_iter();
        for (split, &count) in counts.iter().enumerate() {
            for q in qi.by_ref().take(count) {
                let cell = &groups[q];
                buckets[split].extend(cell.coachable.iter().map(|p| (*p).clone()));
                buckets[split].extend(cell.not_coachable.iter().map(|p| (*p).clone()));
            }
        }
    } else {
        for (question_id, mut cell) in groups {
            let coachable_minor = cell.coachable.len() <= cell.not_coachable.len();
            let (minority, majority, minority_label) = if coachable_minor {
                (&mut cell.coachable, &mut cell.not_coachable, Label::Coachable)
            } else {
                (&mut cell.not_coachable, &mut cell.coachable, Label::NotCoachable)
            };
            if minority.len() < 3 {
                return Err(DatasetError::InsufficientData {
                    question_id: question_id.to_string(),
                    label: minority_label,
                    have: minority.len(),
                    need: 3,
                });
            }
            minority.shuffle(&mut rng);
            majority.shuffle(&mut rng);
            let minor_counts = apportion(minority.len(), &cfg.fractions, 1);
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut major_counts = [0usize; 3];
            let quotas: Vec<f64> = cfg.fractions.iter().map(|f| f * majority.len() as f64).collect();
            for i in 0..3 {
                lo[i] = ((minor_counts[i] as f64 / cfg.max_ratio) - 1e-9).ceil() as usize;
                hi[i] = ratio_cap(cfg.max_ratio, minor_counts[i]);
                major_counts[i] = (quotas[i].floor() as usize).clamp(lo[i], hi[i]);
            }
            if !adjust_sum(&mut major_counts, &quotas, majority.len(), &lo, &hi) {
                return Err(DatasetError::RatioUnsatisfiable(question_id.to_string()));
            }
            let mut minor_iter = minority.iter();
            let mut major_iter = majority.iter();
            for split in 0..3 {
                buckets[split].extend(minor_iter.by_ref().take(minor_counts[split]).map(|p| (*p).clone()));
                buckets[split].extend(major_iter.by_ref().take(major_counts[split]).map(|p| (*p).clone()));
            }
        }
    }

    let [train, validation, test] = buckets.map(|mut b| {
        b.sort();
        b
    });
    let mk = |name, pairs| DatasetSplit {
        name,
        pairs,
        seed: cfg.seed,
    };
    Ok(Splits {
        train: mk(SplitName::Train, train),
        validation: mk(SplitName::Validation, validation),
        test: mk(SplitName::Test, test),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: SplitName,
    pub total_samples: usize,
    pub not_coachable_count: usize,
    pub coachable_count: usize,
    pub avg_question_length: f64,
    pub avg_transcript_length: f64,
}

impl SplitStats {
    pub fn rounded(&self) -> SplitStats {
        SplitStats {
            avg_question_length: round2(self.avg_question_length),
            avg_transcript_length: round2(self.avg_transcript_length),
            ..self.clone()
        }
    }
}

/// Counts and mean whitespace-token lengths. Empty splits report 0 averages.
pub fn split_stats(split: &DatasetSplit, corpus: &Corpus) -> Result<SplitStats, DatasetError> {
    let mut q_len = 0usize;
    let mut t_len = 0usize;
    let mut coachable = 0usize;
    for p in &split.pairs {
        let dangling = || DatasetError::DanglingReference {
            question_id: p.question_id.clone(),
            call_id: p.call_id.clone(),
        };
        let q = corpus.questions.get(&p.question_id).ok_or_else(dangling)?;
        let t = corpus.transcripts.get(&p.call_id).ok_or_else(dangling)?;
        q_len += word_count(&q.text);
        t_len += t.word_count;
        if p.label == Label::Coachable {
            coachable += 1;
        }
    }
    let n = split.pairs.len();
    let mean = |s: usize| if n == 0 { 0.0 } else { s as f64 / n as f64 };
    Ok(SplitStats {
        split: split.name,
        total_samples: n,
        not_coachable_count: n - coachable,
        coachable_count: coachable,
        avg_question_length: mean(q_len),
        avg_transcript_length: mean(t_len),
    })
}

/// Aligned plain-text table with one row per split.
pub fn render_stats_table(stats: &[SplitStats]) -> String {
    let headers = [
        "Split",
        "Total Samples",
        "Not Coachable",
        "Coachable",
        "Avg. Question Length",
        "Avg. Transcript Length",
    ];
    let rows: Vec<[String; 6]> = stats
        .iter()
        .map(|s| {
            [
                match s.split {
                    SplitName::Train => "Training".to_string(),
                    SplitName::Validation => "Validation".to_string(),
                    SplitName::Test => "Test".to_string(),
                },
                s.total_samples.to_string(),
                s.not_coachable_count.to_string(),
                s.coachable_count.to_string(),
                format!("{:.2}", round2(s.avg_question_length)),
                format!("{:.2}", round2(s.avg_transcript_length)),
            ]
        })
        .collect();
    render_table(&headers, &rows)
}

pub(crate) fn render_table<const N: usize>(headers: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut headers.iter().copied());
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")
    );
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplits {
    pub train: Vec<LabeledPair>,
    pub validation: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

/// On-disk description of a dataset build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub max_ratio: f64,
    pub holdout_questions: bool,
    pub splits: ManifestSplits,
}

impl SplitManifest {
    pub fn new(cfg: &SplitConfig, splits: &Splits) -> Self {
        Self {
            version: MANIFEST_VERSION,
            seed: cfg.seed,
            fractions: cfg.fractions,
            max_ratio: cfg.max_ratio,
            holdout_questions: cfg.holdout_questions,
            splits: ManifestSplits {
                train: splits.train.pairs.clone(),
                validation: splits.validation.pairs.clone(),
                test: splits.test.pairs.clone(),
            },
        }
    }

    pub fn splits(&self) -> Splits {
        let mk = |name, pairs: &Vec<LabeledPair>| DatasetSplit {
            name,
            pairs: pairs.clone(),
            seed: self.seed,
        };
        Splits {
            train: mk(SplitName::Train, &self.splits.train),
            validation: mk(SplitName::Validation, &self.splits.validation),
            test: mk(SplitName::Test, &self.splits.test),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses and checks that no pair appears twice.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, DatasetError> {
        let m: SplitManifest =
            serde_json::from_slice(bytes).map_err(|e| DatasetError::Format(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Format(format!("unsupported version {}", m.version)));
        }
        let mut seen = BTreeSet::new();
        for p in m
            .splits
            .train
            .iter()
            .chain(&m.splits.validation)
            .chain(&m.splits.test)
        {
            if !seen.insert((&p.question_id, &p.call_id)) {
                return Err(DatasetError::Format(format!(
                    "pair ({}, {}) listed twice",
                    p.question_id, p.call_id
                )));
            }
        }
        Ok(m)
    }
}
